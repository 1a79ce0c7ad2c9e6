"""Command-line experiment runner emitting deterministic CSV artifacts.

Commands: train, bench, smoothing, spectrum, gradcheck. Configuration is
a flat key=value file plus later --key=value overrides; every key has a
default, so bare commands run out of the box. CSV files are written via
a temp file and an atomic rename so reruns never leave partial output.

Exit codes: 0 success, 1 usage error, 2 runtime or numeric failure.
"""

from __future__ import annotations

import dataclasses
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .analysis import (
    bench_attention,
    loglog_slope,
    softmax_std_curve,
    spectrum_area,
    spectrum_experiment,
)
from .attention import SortKind
from .data import (
    LISTOPS_VOCAB,
    FormatError,
    Rng,
    gen_listops_lite,
    gen_multiset_majority,
    load_idx,
)
from .encoder import AttentionKind, EncoderConfig, init_encoder_params
from .gradcheck import MODEL_TOLERANCE, OP_TOLERANCE, run_all
from .training import TrainSettings, train_loop


class UsageError(Exception):
    """Bad command line or config; reported with exit code 1."""


@dataclass
class RunConfig:
    command: str = ""
    task: str = "majority"          # majority | listops | idx
    attention: str = "slicesort"    # softmax | slicesort
    strategy: str = "ascending"     # ascending | interleave | maxexchange
    layers: int = 2
    d_model: int = 32
    heads: int = 4
    ffn_mult: int = 2
    vocab: int = 8
    seq_len: int = 64               # includes the classification slot
    n_classes: int = 4
    use_output_projection: bool = True
    use_positional: bool = True
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 1.0
    batch_size: int = 32
    epochs: int = 25
    train_samples: int = 500
    test_samples: int = 200
    seed: int = 0
    out_dir: str = "runs"
    listops_depth: int = 3
    images_path: str = ""
    labels_path: str = ""
    bench_sizes: str = "256,512,1024,2048,4096,8192"
    bench_repeats: int = 3
    bench_d: int = 8
    bench_heads: int = 1
    bench_head_dim: int = 8
    smoothing_sizes: str = "10,100,1000,10000,100000,1000000"
    smoothing_trials: int = 100
    gradcheck_seeds: int = 5
    spectrum_probe: int = 8


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_SETTABLE = [n for n in _FIELDS if n != "command"]


def _parse_value(key: str, raw: str):
    kind = _FIELDS[key].type
    raw = raw.strip()
    try:
        if kind == "bool":
            lowered = raw.lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise UsageError(f"cannot parse value {raw!r} for key {key!r} (expected {kind})")


def _apply(cfg: RunConfig, key: str, raw: str) -> None:
    if key not in _FIELDS or key == "command":
        raise UsageError(
            f"unknown key {key!r}; valid keys: {', '.join(sorted(_SETTABLE))}"
        )
    setattr(cfg, key, _parse_value(key, raw))


def parse_config(path: str | None, overrides: Sequence[str] = ()) -> RunConfig:
    """Build a RunConfig from an optional key=value file plus override flags.

    Later overrides win over file entries. Lines that are blank or start
    with '#' are skipped. Unknown keys and unparseable values raise
    UsageError naming the key.
    """
    cfg = RunConfig()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise UsageError(f"config file not found: {path}")
        for lineno, line in enumerate(p.read_text().splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, raw = line.split("=", 1)
            _apply(cfg, key.strip(), raw)
    for item in overrides:
        body = item[2:] if item.startswith("--") else item
        if "=" not in body:
            raise UsageError(f"expected --key=value, got {item!r}")
        key, raw = body.split("=", 1)
        _apply(cfg, key.strip(), raw)
    return cfg


_USAGE = """usage: sortattn COMMAND [--config=FILE] [--key=value ...]

commands:
  train      train one encoder; writes training_log.csv
  bench      time both attention mechanisms across N; writes bench.csv
  smoothing  softmax output std vs N; writes smoothing.csv
  spectrum   train matched models, emit per-layer singular spectra CSVs
  gradcheck  finite-difference check of every op and the full model

config keys (defaults in parentheses):
""" + "\n".join(
    f"  {name} ({getattr(RunConfig(), name)!r})" for name in _SETTABLE
)


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path: Path, header: str, rows: Iterable[tuple]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    body = "\n".join(",".join(_fmt(c) for c in row) for row in rows)
    text = header + "\n" + body + ("\n" if body else "")
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _parse_int_list(raw: str, key: str) -> list[int]:
    try:
        values = [int(part) for part in raw.split(",") if part.strip()]
    except ValueError:
        raise UsageError(f"cannot parse {key}={raw!r}: expected comma-separated integers")
    if not values:
        raise UsageError(f"{key} is empty")
    return values


def _encoder_config(cfg: RunConfig, vocab: int, n_classes: int, seq_len: int,
                    attention: str) -> EncoderConfig:
    try:
        kind = AttentionKind(attention)
    except ValueError:
        raise UsageError(
            f"unknown attention {attention!r}; valid: "
            + ", ".join(k.value for k in AttentionKind)
        )
    try:
        sort_kind = SortKind(cfg.strategy)
    except ValueError:
        raise UsageError(
            f"unknown strategy {cfg.strategy!r}; valid: "
            + ", ".join(k.value for k in SortKind)
        )
    if cfg.d_model % cfg.heads != 0:
        raise UsageError(f"heads={cfg.heads} must divide d_model={cfg.d_model}")
    return EncoderConfig(
        layers=cfg.layers,
        d_model=cfg.d_model,
        heads=cfg.heads,
        head_dim=cfg.d_model // cfg.heads,
        vocab=vocab,
        seq_len=seq_len,
        n_classes=n_classes,
        attention=kind,
        sort_kind=sort_kind,
        ffn_mult=cfg.ffn_mult,
        use_output_projection=cfg.use_output_projection,
        use_positional=cfg.use_positional,
    )


def _build_task(cfg: RunConfig):
    """Returns (train, test, vocab, n_classes, seq_len) for the configured task."""
    total = cfg.train_samples + cfg.test_samples
    if cfg.task == "majority":
        data = gen_multiset_majority(cfg.seed, total, cfg.seq_len - 1, cfg.vocab, cfg.n_classes)
        vocab, n_classes, seq_len = cfg.vocab, cfg.n_classes, cfg.seq_len
    elif cfg.task == "listops":
        if not 6 <= cfg.seq_len <= 65:
            raise UsageError(f"listops needs 6 <= seq_len <= 65, got {cfg.seq_len}")
        data = gen_listops_lite(cfg.seed, total, cfg.listops_depth, cfg.seq_len - 1)
        vocab, n_classes, seq_len = LISTOPS_VOCAB, 10, cfg.seq_len
    elif cfg.task == "idx":
        if not cfg.images_path or not cfg.labels_path:
            raise UsageError("task=idx requires images_path and labels_path")
        data = load_idx(cfg.images_path, cfg.labels_path, limit=total)
        if len(data) < total:
            raise UsageError(
                f"need {total} samples (train_samples + test_samples), file has {len(data)}"
            )
        vocab, n_classes, seq_len = 256, 10, len(data[0].tokens) + 1
    else:
        raise UsageError(f"unknown task {cfg.task!r}; valid: majority, listops, idx")
    return data[: cfg.train_samples], data[cfg.train_samples:], vocab, n_classes, seq_len


def _train_settings(cfg: RunConfig) -> TrainSettings:
    return TrainSettings(
        lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps,
        clip_norm=cfg.clip_norm, batch_size=cfg.batch_size, seed=cfg.seed,
    )


def _cmd_train(cfg: RunConfig) -> int:
    train, test, vocab, n_classes, seq_len = _build_task(cfg)
    econf = _encoder_config(cfg, vocab, n_classes, seq_len, cfg.attention)
    params = init_encoder_params(Rng(cfg.seed).split(1).generator, econf)
    log = train_loop(_train_settings(cfg), params, train, cfg.epochs, eval_dataset=test)
    out = Path(cfg.out_dir) / "training_log.csv"
    _write_csv(
        out,
        "epoch,loss,train_acc,test_acc,seconds",
        [(e.epoch, e.loss, e.train_acc, e.test_acc, e.seconds) for e in log],
    )
    if log:
        last = log[-1]
        print(
            f"{cfg.attention} on {cfg.task}: epoch {last.epoch} "
            f"loss {last.loss:.4f} train_acc {last.train_acc:.3f} test_acc {last.test_acc:.3f}"
        )
    print(f"wrote {out}")
    return 0


def _cmd_bench(cfg: RunConfig) -> int:
    sizes = _parse_int_list(cfg.bench_sizes, "bench_sizes")
    records = bench_attention(
        sizes, cfg.bench_d, cfg.bench_heads, cfg.bench_head_dim,
        cfg.bench_repeats, cfg.seed,
    )
    out = Path(cfg.out_dir) / "bench.csv"
    _write_csv(
        out,
        "mechanism,N,fwd_s,fwdbwd_s,peak_bytes",
        [(r.mechanism, r.n, r.fwd_s, r.fwdbwd_s, r.peak_bytes) for r in records],
    )
    if len(sizes) >= 2:
        for mechanism in ("softmax", "slicesort"):
            own = [r for r in records if r.mechanism == mechanism]
            slope = loglog_slope([r.n for r in own], [r.fwd_s for r in own])
            print(f"{mechanism}: forward log-log slope {slope:.2f}")
    print(f"wrote {out}")
    return 0


def _cmd_smoothing(cfg: RunConfig) -> int:
    sizes = _parse_int_list(cfg.smoothing_sizes, "smoothing_sizes")
    table = softmax_std_curve(sizes, cfg.smoothing_trials, cfg.seed)
    out = Path(cfg.out_dir) / "smoothing.csv"
    _write_csv(out, "N,mean_std", table)
    print(f"wrote {out}")
    return 0


def _cmd_spectrum(cfg: RunConfig) -> int:
    train, test, vocab, n_classes, seq_len = _build_task(cfg)
    settings = _train_settings(cfg)
    models = []
    for attention in ("softmax", "slicesort"):
        econf = _encoder_config(cfg, vocab, n_classes, seq_len, attention)
        params = init_encoder_params(Rng(cfg.seed).split(1).generator, econf)
        train_loop(settings, params, train, cfg.epochs, eval_dataset=None)
        models.append((attention, params))
    probe_src = test if test else train
    probe = np.stack([s.tokens for s in probe_src[: max(1, cfg.spectrum_probe)]])
    reports = spectrum_experiment(models, probe)
    out_dir = Path(cfg.out_dir)
    for report in reports:
        path = out_dir / f"spectrum_{report.mechanism}_{report.layer}.csv"
        _write_csv(path, "index,sigma",
                   [(i, s) for i, s in enumerate(report.sigma)])
        print(f"wrote {path}")
    final = {r.mechanism: spectrum_area(r) for r in reports if r.layer == cfg.layers}
    if len(final) == 2:
        slower = final["slicesort"] >= final["softmax"]
        print(
            f"final-layer spectrum area: slicesort {final['slicesort']:.4f}, "
            f"softmax {final['softmax']:.4f} -> "
            + ("slicesort decays slower (matches expectation)"
               if slower else "softmax decays slower (flagged: differs from expectation)")
        )
    return 0


def _cmd_gradcheck(cfg: RunConfig) -> int:
    seeds = list(range(max(1, cfg.gradcheck_seeds)))
    results = run_all(seeds)
    failed = False
    print(f"{'check':28s} {'max rel err':>12s}  tolerance")
    for name, err in results.items():
        tol = MODEL_TOLERANCE if name.startswith("model/") else OP_TOLERANCE
        ok = err < tol
        failed = failed or not ok
        print(f"{name:28s} {err:12.3e}  {tol:.0e} {'ok' if ok else 'FAIL'}")
    return 2 if failed else 0


_COMMANDS = {
    "train": _cmd_train,
    "bench": _cmd_bench,
    "smoothing": _cmd_smoothing,
    "spectrum": _cmd_spectrum,
    "gradcheck": _cmd_gradcheck,
}


def dispatch(cfg: RunConfig) -> int:
    """Run the configured command; returns the process exit code."""
    handler = _COMMANDS.get(cfg.command)
    if handler is None:
        print(_USAGE, file=sys.stderr)
        print(f"error: unknown command {cfg.command!r}", file=sys.stderr)
        return 1
    return handler(cfg)


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        print(_USAGE, file=sys.stderr)
        return 1
    if argv[0] in ("-h", "--help", "help"):
        print(_USAGE)
        return 0
    command, rest = argv[0], argv[1:]
    config_path = None
    overrides = []
    for item in rest:
        if item.startswith("--config="):
            config_path = item.split("=", 1)[1]
        else:
            overrides.append(item)
    try:
        cfg = parse_config(config_path, overrides)
        cfg.command = command
        return dispatch(cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FloatingPointError, FormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
