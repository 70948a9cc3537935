"""Command-line orchestration: simulate, align, pretrain, train, fuse, eval, report.

Every command writes ``config.txt`` (flat ``key=value``) into its output
directory.  Exit codes: 0 success, 2 config error, 3 data error,
4 numeric divergence.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path


from .checkpoint import ParamSet
from .encoder import HRMS_PROMPTS, PROJECTIONS
from .exceptions import (
    ConfigError,
    DegenerateInputError,
    DependencyError,
    DimensionError,
    DivergenceError,
    FormatError,
    ParameterError,
    SizeError,
)
from .metrics import CSV_HEADER, MetricReport, evaluate, write_reports
from .protocol import SceneTriplet, SensorModel, bdsd_fuse, exp_upsample, make_triplet
from .rasters import Raster, default_band_map, export_preview, read_raster, synth_scene, write_raster
from .stage1 import Stage1Config, train_stage1
from .stage1 import write_log as write_stage1_log
from .stage2 import ABLATIONS, PretrainConfig, Stage2Config, backbone_forward, pretrain_backbone_reduced, train_stage2
from .stage2 import write_log as write_stage2_log

OUTPUT_ROOT_ENV = "PANLANG_OUTPUT_ROOT"
CONFIG_FILE = "config.txt"
MANIFEST = "manifest.csv"
METRICS_FILE = "metrics.csv"
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4
HELDOUT_OFFSET = 5000


# ---------------------------------------------------------------------------
# run configuration


@dataclass
class RunConfig:
    """Everything that determines a run's artifacts.

    Per-stage iteration overrides of ``-1`` inherit ``iterations``. ``lr`` drives
    alignment; the two backbone stages have their own, smaller step size.
    """

    seed: int = 0
    scenes: int = 32
    heldout: int = 20
    size: int = 64
    bands: int = 4
    mtf_gain: float = 0.3
    pan_gain: float = 0.15
    batch_size: int = 32
    iterations: int = 1000
    lr: float = 0.003
    pretrain_lr: float = 0.0003
    train_lr: float = 0.0003
    prompt_variant: str = "Wald"
    projection: str = "Conv"
    use_spec_spat: bool = True
    use_qnr: bool = True
    use_pseudo: bool = True
    use_semantic: bool = True
    w_d: float = 1.0
    patch: int = 32
    align_iterations: int = -1
    pretrain_iterations: int = -1
    train_iterations: int = -1
    output_dir: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(ok: bool, msg: str) -> None:
            if not ok:
                raise ConfigError(msg)

        need(self.bands in (4, 8), f"bands must be 4 or 8, got {self.bands}")
        need(self.size > 0 and self.size % 4 == 0, f"size must be a positive multiple of 4, got {self.size}")
        need(self.scenes >= 2, "scenes must be >= 2")
        need(0 <= self.heldout <= HELDOUT_OFFSET and self.scenes <= HELDOUT_OFFSET,
             f"scenes and heldout must be <= {HELDOUT_OFFSET}")
        need(self.seed >= 0, "seed must be >= 0")
        need(0 < self.mtf_gain < 1 and 0 < self.pan_gain < 1, "MTF gains must lie in (0, 1)")
        need(self.batch_size >= 1, "batch_size must be >= 1")
        need(self.iterations >= 0, "iterations must be >= 0")
        for name in ("align_iterations", "pretrain_iterations", "train_iterations"):
            need(getattr(self, name) >= -1, f"{name} must be >= -1")
        for name in ("lr", "pretrain_lr", "train_lr"):
            need(getattr(self, name) >= 0, f"{name} must be >= 0")
        need(self.prompt_variant in HRMS_PROMPTS, f"prompt_variant must be one of {sorted(HRMS_PROMPTS)}")
        need(self.projection in PROJECTIONS, f"projection must be one of {list(PROJECTIONS)}")
        need(self.w_d >= 0, "w_d must be >= 0")
        need(self.patch > 0 and self.patch % 4 == 0 and self.patch <= self.size,
             "patch must be a multiple of 4 no larger than size")
        need(any((self.use_spec_spat, self.use_qnr, self.use_pseudo, self.use_semantic)),
             "at least one stage-II loss group must be enabled")
        need("\n" not in self.output_dir and "=" not in self.output_dir, "output_dir may not contain '=' or newlines")

    def stage_iterations(self, stage: str) -> int:
        v = getattr(self, f"{stage}_iterations")
        return self.iterations if v < 0 else v

    def sensor(self) -> SensorModel:
        return SensorModel(mtf_gains=(self.mtf_gain,) * self.bands, pan_weights=(1.0 / self.bands,) * self.bands,
                           pan_gain=self.pan_gain)

    def ablation_label(self) -> str:
        return self.stage2().label()

    def stage1(self) -> Stage1Config:
        return Stage1Config(iterations=self.stage_iterations("align"), batch_size=self.batch_size, lr=self.lr,
                            seed=self.seed, prompt_variant=self.prompt_variant, projection=self.projection)

    def pretrain(self) -> PretrainConfig:
        return PretrainConfig(iterations=self.stage_iterations("pretrain"), batch_size=self.batch_size,
                              lr=self.pretrain_lr, seed=self.seed)

    def stage2(self) -> Stage2Config:
        return Stage2Config(iterations=self.stage_iterations("train"), batch_size=self.batch_size,
                            lr=self.train_lr, seed=self.seed, patch=self.patch, use_spec_spat=self.use_spec_spat,
                            use_qnr=self.use_qnr, use_pseudo=self.use_pseudo, use_semantic=self.use_semantic,
                            w_d=self.w_d, prompt_variant=self.prompt_variant)

    # -- serialization ------------------------------------------------------
    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name}={_format_value(v)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, base: "RunConfig | None" = None) -> "RunConfig":
        values = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {n}: expected key=value, got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key.replace("-", "_")] = value
        return cls.from_strings(values, base)

    @classmethod
    def from_strings(cls, values: dict, base: "RunConfig | None" = None) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        current = {f: getattr(base, f) for f in known} if base is not None else {}
        for key, value in values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            current[key] = _parse_value(key, value, type(getattr(cls(), key)))
        return cls(**current)

    def save(self, directory) -> None:
        Path(directory).mkdir(parents=True, exist_ok=True)
        (Path(directory) / CONFIG_FILE).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text())


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(key: str, value: str, kind: type):
    try:
        if kind is bool:
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        return kind(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {kind.__name__}") from None


# ---------------------------------------------------------------------------
# dataset on disk


def _scene_seed(cfg: RunConfig, split: str, i: int) -> int:
    return cfg.seed * 2 * HELDOUT_OFFSET + (HELDOUT_OFFSET if split == "heldout" else 0) + i


def load_dataset(directory, split: str = "train") -> list[SceneTriplet]:
    """Triplets of one split listed in the dataset manifest; ``reference`` is the HR scene."""
    directory = Path(directory)
    path = directory / MANIFEST
    if not path.exists():
        raise DependencyError(f"no dataset manifest at {path}")
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["split"] != split:
                continue
            get = lambda k: read_raster(directory / row[k]) if row[k] else None  # noqa: E731
            out.append(SceneTriplet(get("lrms"), get("pan"), get("pseudo"), int(row["scene_id"]), get("hr")))
    if not out:
        raise DependencyError(f"dataset {directory} has no {split!r} scenes")
    return out


def _out_dir(args, command: str) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    root = os.environ.get(OUTPUT_ROOT_ENV, "runs")
    return Path(root) / command


def _progress(enabled: bool, every: int = 100):
    if not enabled:
        return None

    def report(it, values):
        if it % every == 0:
            print(f"  iter {it}: " + " ".join(f"{v:.5f}" for v in values), file=sys.stderr)

    return report


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: RunConfig, out: Path) -> Path:
    """Write train and held-out triplets (PANR) and a manifest."""
    sensor = cfg.sensor()
    scene_dir = out / "scenes"
    scene_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for split, count in (("train", cfg.scenes), ("heldout", cfg.heldout)):
        for i in range(count):
            seed = _scene_seed(cfg, split, i)
            scene = synth_scene(seed, cfg.size, cfg.bands, scene_id=seed)
            t = make_triplet(scene, sensor, with_pseudo=split == "train")
            stem = f"{split}_{i:04d}"
            files = {"hr": scene.hr_ms, "lrms": t.lrms, "pan": t.pan, "pseudo": t.pseudo_hrms}
            row = {"scene_id": seed, "split": split, "seed": seed}
            for key, r in files.items():
                if r is None:
                    row[key] = ""
                    continue
                rel = f"scenes/{stem}_{key}.panr"
                write_raster(r, out / rel)
                row[key] = rel
            rows.append(row)
    with open(out / MANIFEST, "w", newline="") as fh:
        w = csv.DictWriter(fh, ["scene_id", "split", "seed", "hr", "lrms", "pan", "pseudo"], lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    cfg.save(out)
    return out


def cmd_align(cfg: RunConfig, dataset, out: Path, verbose: bool = False) -> Path:
    triplets = load_dataset(dataset, "train")
    res = train_stage1(triplets, cfg.stage1(), progress=_progress(verbose))
    out.mkdir(parents=True, exist_ok=True)
    res.params.save(out / "stage1.panw")
    write_stage1_log(res.log, out / "stage1_log.csv")
    cfg.save(out)
    return out / "stage1.panw"


def cmd_pretrain(cfg: RunConfig, dataset, out: Path, verbose: bool = False) -> Path:
    triplets = load_dataset(dataset, "train")
    out.mkdir(parents=True, exist_ok=True)
    try:
        res = pretrain_backbone_reduced(triplets, cfg.pretrain(), cfg.sensor(), progress=_progress(verbose))
    except DivergenceError as exc:
        _save_last_good(exc, out, cfg)
        raise
    res.params.save(out / "pseudo.panw")
    write_stage2_log(res.log, out / "pretrain_log.csv", res.header)
    cfg.save(out)
    return out / "pseudo.panw"


def _load_ckpt(path, what: str) -> ParamSet:
    if path is None or not Path(path).exists():
        raise DependencyError(f"{what} checkpoint {path!r} is required but missing")
    return ParamSet.load(path)


def _save_last_good(exc: DivergenceError, out: Path, cfg: RunConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    if getattr(exc, "last_good", None) is not None:
        exc.last_good.save(out / "last_good.panw")
    cfg.save(out)


def cmd_train(cfg: RunConfig, dataset, stage1_ckpt, pseudo_ckpt, out: Path, verbose: bool = False) -> Path:
    encoder = _load_ckpt(stage1_ckpt, "stage-I encoder") if cfg.use_semantic else None
    pseudo = _load_ckpt(pseudo_ckpt, "pseudo-supervisor") if cfg.use_pseudo else None
    triplets = load_dataset(dataset, "train")
    out.mkdir(parents=True, exist_ok=True)
    try:
        res = train_stage2(triplets, encoder, pseudo, cfg.stage2(), cfg.sensor(), progress=_progress(verbose))
    except DivergenceError as exc:
        _save_last_good(exc, out, cfg)
        raise
    res.params.save(out / "backbone.panw")
    write_stage2_log(res.log, out / "train_log.csv", res.header)
    cfg.save(out)
    return out / "backbone.panw"


def _write_preview(r: Raster, path: Path) -> None:
    path.write_bytes(export_preview(r, default_band_map(r)))


def cmd_fuse(backbone_ckpt, lrms_path, pan_path, out_path) -> Path:
    """Fused raster at ``out_path`` plus a ``.ppm`` (or ``.pgm``) preview next to it."""
    params = _load_ckpt(backbone_ckpt, "backbone")
    fused = backbone_forward(read_raster(lrms_path), read_raster(pan_path), params)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_raster(fused, out_path)
    _write_preview(fused, out_path.with_suffix(".ppm" if fused.bands >= 3 else ".pgm"))
    return out_path


def _fuser(method: str, backbone: ParamSet | None, sensor: SensorModel):
    if method == "backbone":
        return lambda t: backbone_forward(t.lrms, t.pan, backbone, sensor.ratio)
    if method == "exp":
        return lambda t: exp_upsample(t.lrms, sensor.ratio)
    if method == "bdsd":
        return lambda t: bdsd_fuse(t.lrms, t.pan, sensor)
    raise ConfigError(f"unknown fusion method {method!r}")


def evaluate_heldout(fuse, triplets, sensor: SensorModel) -> list:
    """Per scene: reference indices against the simulated HR scene (the
    triplet is the reduced-resolution simulation of it) and the no-reference
    QNR terms from the triplet's own LRMS and PAN."""
    rows = []
    for t in triplets:
        rows.append((t.scene_id, evaluate(fuse(t), t.lrms, t.pan, t.reference, sensor, sensor.ratio)))
    return rows


def cmd_eval_dataset(cfg: RunConfig, dataset, out: Path, method: str = "backbone", backbone_ckpt=None,
                     previews: bool = True) -> Path:
    sensor = cfg.sensor()
    backbone = _load_ckpt(backbone_ckpt, "backbone") if method == "backbone" else None
    triplets = load_dataset(dataset, "heldout")
    fuse = _fuser(method, backbone, sensor)
    rows = evaluate_heldout(fuse, triplets, sensor)
    out.mkdir(parents=True, exist_ok=True)
    mean = MetricReport.mean(r for _, r in rows)
    write_reports([((str(sid),), r) for sid, r in rows] + [(("mean",), mean)], out / METRICS_FILE, ("scene",))
    if previews:
        pdir = out / "previews"
        pdir.mkdir(exist_ok=True)
        for t in triplets[:4]:
            _write_preview(fuse(t), pdir / f"scene_{t.scene_id}.ppm")
    if not (out / CONFIG_FILE).exists():
        cfg.save(out)
    return out / METRICS_FILE


def cmd_eval_files(fused_path, out: Path, lrms_path=None, pan_path=None, reference_path=None,
                   cfg: RunConfig | None = None) -> Path:
    cfg = cfg or RunConfig()
    fused = read_raster(fused_path)
    lrms = read_raster(lrms_path) if lrms_path else None
    pan = read_raster(pan_path) if pan_path else None
    ref = read_raster(reference_path) if reference_path else None
    if (lrms is None) != (pan is None):
        raise ConfigError("QNR needs both --lrms and --pan")
    if lrms is None and ref is None:
        raise ConfigError("eval needs --reference and/or --lrms with --pan")
    sensor = SensorModel.default(fused.bands, cfg.mtf_gain)
    sensor = SensorModel(sensor.mtf_gains, sensor.pan_weights, pan_gain=cfg.pan_gain)
    rep = evaluate(fused, lrms, pan, ref, sensor)
    out.mkdir(parents=True, exist_ok=True)
    write_reports([((Path(fused_path).name,), rep)], out / METRICS_FILE, ("scene",))
    cfg.save(out)
    return out / METRICS_FILE


REPORT_CONFIG_KEYS = ("seed", "bands", "prompt_variant", "projection", "use_spec_spat", "use_qnr", "use_pseudo",
                      "use_semantic", "w_d")


def _mean_row(run: Path) -> MetricReport | None:
    path = run / METRICS_FILE
    if not path.exists():
        return None
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        if row.get("scene") == "mean":
            return MetricReport.from_row(row)
    return MetricReport.from_row(rows[-1]) if rows else None


def cmd_report(run_dirs, out: Path) -> tuple[Path, bool]:
    """Aggregate CSV (one row per run, sorted by name) and the ablation table.

    Returns ``(report path, complete)``; incomplete rows are flagged.
    """
    runs = sorted((Path(r) for r in run_dirs), key=lambda p: p.name)
    out.mkdir(parents=True, exist_ok=True)
    complete = True
    records = []
    for run in runs:
        cfg = RunConfig.load(run / CONFIG_FILE) if (run / CONFIG_FILE).exists() else None
        rep = _mean_row(run)
        ok = cfg is not None and rep is not None
        complete &= ok
        records.append((run, cfg, rep, ok))
    header = ["run", "status", "ablation", *REPORT_CONFIG_KEYS, *CSV_HEADER]
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for run, cfg, rep, ok in records:
            conf = [_format_value(getattr(cfg, k)) if cfg else "" for k in REPORT_CONFIG_KEYS]
            w.writerow([run.name, "ok" if ok else "incomplete", cfg.ablation_label() if cfg else "", *conf,
                        *(rep.as_row() if rep else [""] * len(CSV_HEADER))])
    by_label = {}
    for run, cfg, rep, ok in records:
        if ok and cfg.ablation_label() in ABLATIONS:
            by_label.setdefault(cfg.ablation_label(), (run, rep))
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["configuration", "run", *CSV_HEADER])
        for label in ABLATIONS:
            run, rep = by_label.get(label, (None, None))
            w.writerow([label, run.name if run else "", *(rep.as_row() if rep else [""] * len(CSV_HEADER))])
    cfg_text = "runs=" + ",".join(str(r) for r in runs) + "\n"
    (out / CONFIG_FILE).write_text(cfg_text)
    return out / "report.csv", complete


# ---------------------------------------------------------------------------
# argument parsing


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file (flags override it)")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        p.add_argument(flag, dest=f"cfg_{f.name}", default=None, metavar=f.name.upper(),
                       help=f"default {_format_value(f.default)}")


def config_from_args(args, base: RunConfig | None = None) -> RunConfig:
    cfg = base
    if getattr(args, "config", None):
        cfg = RunConfig.from_text(Path(args.config).read_text(), base)
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    return RunConfig.from_strings(overrides, cfg)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="panlang", description="Language-guided unsupervised pansharpening.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize a dataset of triplets")
    p.add_argument("--out")
    _add_config_flags(p)

    for name, helptext in (("align", "stage I: language alignment of the encoder"),
                           ("pretrain", "reduced-resolution pseudo-supervisor")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--dataset", required=True)
        p.add_argument("--out")
        p.add_argument("--verbose", action="store_true")
        _add_config_flags(p)

    p = sub.add_parser("train", help="stage II: unsupervised backbone training")
    p.add_argument("--dataset", required=True)
    p.add_argument("--stage1", help="stage-I checkpoint (needed with the semantic loss)")
    p.add_argument("--pseudo", help="pseudo-supervisor checkpoint (needed with the pseudo loss)")
    p.add_argument("--out")
    p.add_argument("--verbose", action="store_true")
    _add_config_flags(p)

    p = sub.add_parser("fuse", help="fuse one LRMS/PAN pair")
    p.add_argument("--backbone", required=True)
    p.add_argument("--lrms", required=True)
    p.add_argument("--pan", required=True)
    p.add_argument("--out", required=True, help="output .panr path")

    p = sub.add_parser("eval", help="quality indices for a fused raster or a model on held-out scenes")
    p.add_argument("--fused", help="fused raster (single-image mode)")
    p.add_argument("--lrms")
    p.add_argument("--pan")
    p.add_argument("--reference")
    p.add_argument("--dataset", help="dataset directory (held-out mode)")
    p.add_argument("--backbone", help="backbone checkpoint for held-out mode")
    p.add_argument("--method", default="backbone", choices=("backbone", "exp", "bdsd"))
    p.add_argument("--out")
    _add_config_flags(p)

    p = sub.add_parser("report", help="aggregate evaluated runs and emit the ablation table")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "simulate":
            cmd_simulate(config_from_args(args), _out_dir(args, "simulate"))
        elif args.command == "align":
            cmd_align(config_from_args(args), args.dataset, _out_dir(args, "align"), args.verbose)
        elif args.command == "pretrain":
            cmd_pretrain(config_from_args(args), args.dataset, _out_dir(args, "pretrain"), args.verbose)
        elif args.command == "train":
            cmd_train(config_from_args(args), args.dataset, args.stage1, args.pseudo, _out_dir(args, "train"),
                      args.verbose)
        elif args.command == "fuse":
            cmd_fuse(args.backbone, args.lrms, args.pan, args.out)
        elif args.command == "eval":
            if args.dataset:
                out = _out_dir(args, "eval") if args.out or not args.backbone else Path(args.backbone).parent
                base = RunConfig.load(out / CONFIG_FILE) if (out / CONFIG_FILE).exists() else None
                cmd_eval_dataset(config_from_args(args, base), args.dataset, out, args.method, args.backbone)
            elif args.fused:
                cmd_eval_files(args.fused, _out_dir(args, "eval"), args.lrms, args.pan, args.reference,
                               config_from_args(args))
            else:
                raise ConfigError("eval needs --fused or --dataset")
        elif args.command == "report":
            _, complete = cmd_report(args.runs, _out_dir(args, "report"))
            if not complete:
                print("report: some runs are incomplete (missing config or metrics)", file=sys.stderr)
                return EXIT_DATA
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (FormatError, DimensionError, SizeError, DegenerateInputError, DependencyError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
