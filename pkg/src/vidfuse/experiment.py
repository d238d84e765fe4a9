"""End-to-end experiment pipeline, config files, gradient checking, sweeps.

A run executes: obtain data (synthetic or from disk) -> split -> train the
selected models -> score validation and test splits -> fuse scores ->
optionally build the confusion matrix on validation and refine the test
scores -> evaluate -> write every artifact (resolved config, dataset,
checkpoints, score files, confusion matrix, report) under one output
directory. Nothing written depends on wall-clock state, so a rerun with the
same config produces byte-identical files.

Config files are INI text with sections [experiment], [synth] or [data],
[split], [lstm], [fusion], [scorefusion], [refine], [sweep]; every key has
a default so a minimal config runs. See README for the full key list.
"""

from __future__ import annotations

import configparser
import json
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .checkpoint import save_checkpoint
from .context import build_confusion_matrix, refine_scores
from .data import (ConfusablePair, SynthConfig, VideoRecord, load_dataset,
                   manifest_hash, class_hash, split_dataset, split_records,
                   stream_sequences, synth_generate, write_dataset)
from .errors import ConfigError, DataError, NumericalError, VidfuseError
from .fusion import (PooledBatch, RegConfig, fusion_forward_batch,
                     init_fusion_params, pooled_batch,
                     smooth_loss_and_gradients, train_fusion, zero_row_count)
from .linalg import RngStream
from .lstm import (LstmTrainConfig, init_lstm_stack, lstm_gradients,
                   score_sequences, train_lstm)
from .metrics import EvalReport, accuracy, evaluate
from .scorefusion import FusionWeights, fuse_scores
from .scores import ScoreMatrix, save_scores

MODEL_NAMES = ("lstm-spatial", "lstm-motion", "fusion")


@dataclass
class ExperimentConfig:
    seed: int = 0
    models: tuple[str, ...] = MODEL_NAMES
    dataset_path: str | None = None
    synth: SynthConfig | None = None
    split_fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    split_seed: int | None = None
    lstm: LstmTrainConfig = field(default_factory=LstmTrainConfig)
    lstm_spatial_seed: int | None = None
    lstm_motion_seed: int | None = None
    reg: RegConfig = field(default_factory=RegConfig)
    fusion_weights: tuple[float, ...] | None = None
    refine_enabled: bool = False
    refine_transpose: bool = False
    refine_epsilon: float = 0.0
    refine_renormalize: bool = False
    sweep_lambda2: tuple[float, ...] = (0.0,)
    sweep_lambda3: tuple[float, ...] = (0.0,)
    out_dir: str | None = None

    def resolved_seeds(self) -> dict[str, int]:
        """Per-stage seeds; unspecified ones derive from the master seed."""
        return {
            "split": self.split_seed if self.split_seed is not None else self.seed + 1,
            "lstm-spatial": (self.lstm_spatial_seed
                             if self.lstm_spatial_seed is not None else self.seed + 2),
            "lstm-motion": (self.lstm_motion_seed
                            if self.lstm_motion_seed is not None else self.seed + 3),
            "fusion": self.reg.seed if self.reg.seed is not None else self.seed + 4,
        }

    def validate(self) -> None:
        if (self.dataset_path is None) == (self.synth is None):
            raise ConfigError("exactly one of [data] path or [synth] must be configured")
        for m in self.models:
            if m not in MODEL_NAMES:
                raise ConfigError(f"unknown model {m!r}")
        if len(set(self.models)) != len(self.models) or not self.models:
            raise ConfigError("models must be a non-empty list without duplicates")
        if self.fusion_weights is not None and len(self.fusion_weights) != len(self.models):
            raise ConfigError(
                f"{len(self.fusion_weights)} fusion weights for {len(self.models)} models")
        if self.synth is not None:
            self.synth.validate()
        self.lstm.validate()
        self.reg.validate()


# ---------------------------------------------------------------------------
# config files

_SECTION_KEYS = {
    "experiment": {"seed", "models", "out"},
    "data": {"path"},
    "synth": {"num_classes", "samples_per_class", "shared_dim", "unique_dims",
              "noise_scale", "temporal_mode", "pairs", "seed", "feature_dims",
              "seq_len", "motion_seq_len", "num_segments", "class_scale",
              "audio_scale", "unique_scale", "pair_offset", "segment_scale"},
    "split": {"fractions", "seed"},
    "lstm": {"learning_rate", "momentum", "batch_size", "max_iterations",
             "gradient_clip", "hidden_dims", "init_scale", "forget_bias",
             "spatial_seed", "motion_seed"},
    "fusion": {"lambda1", "lambda2", "lambda3", "learning_rate", "epochs",
               "batch_size", "momentum", "seed", "hidden", "loss",
               "hidden_units", "fused_units", "init_scale"},
    "scorefusion": {"weights"},
    "refine": {"enabled", "transpose", "epsilon", "renormalize"},
    "sweep": {"lambda2", "lambda3"},
}


def _parse_pairs(text: str) -> list[ConfusablePair]:
    pairs = []
    for chunk in text.replace(",", " ").split():
        bits = chunk.split(":")
        if len(bits) not in (2, 3):
            raise ConfigError(f"bad pair spec {chunk!r}; expected first:second[:signal]")
        signal = bits[2] if len(bits) == 3 else "level"
        try:
            pairs.append(ConfusablePair(int(bits[0]), int(bits[1]), signal))
        except ValueError as exc:
            raise ConfigError(f"bad pair spec {chunk!r}: {exc}") from exc
    return pairs


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"bad numeric list {text!r}: {exc}") from exc


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"bad integer list {text!r}: {exc}") from exc


def parse_experiment_config(path: str) -> ExperimentConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file {path!r} does not exist")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path!r}: {exc}") from exc

    for section in parser.sections():
        if section not in _SECTION_KEYS:
            raise ConfigError(f"unknown config section [{section}]")
        unknown = set(parser[section]) - _SECTION_KEYS[section]
        if unknown:
            raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")

    cfg = ExperimentConfig()

    def get(section, key, default=None):
        if parser.has_option(section, key):
            return parser.get(section, key)
        return default

    def getbool(section, key, default):
        if parser.has_option(section, key):
            try:
                return parser.getboolean(section, key)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: expected a boolean") from exc
        return default

    try:
        cfg.seed = int(get("experiment", "seed", cfg.seed)) if parser.has_section("experiment") else cfg.seed
        models_text = get("experiment", "models", "all") if parser.has_section("experiment") else "all"
        if models_text.strip() == "all":
            cfg.models = MODEL_NAMES
        else:
            cfg.models = tuple(models_text.replace(",", " ").split())
        out = get("experiment", "out") if parser.has_section("experiment") else None
        cfg.out_dir = out

        if parser.has_section("data"):
            cfg.dataset_path = get("data", "path")
        if parser.has_section("synth"):
            s = parser["synth"]
            cfg.synth = SynthConfig(
                num_classes=int(s.get("num_classes", "4")),
                samples_per_class=(
                    _ints(s["samples_per_class"])
                    if s.get("samples_per_class") and " " in s.get("samples_per_class").strip()
                    else int(s.get("samples_per_class", "10"))),
                shared_dim=int(s.get("shared_dim", "4")),
                unique_dims=_ints(s.get("unique_dims", "2 2 2")),
                noise_scale=float(s.get("noise_scale", "0.1")),
                temporal_mode=s.get("temporal_mode", "stateless"),
                pairs=_parse_pairs(s.get("pairs", "")),
                seed=int(s.get("seed", str(cfg.seed))),
                feature_dims=_ints(s.get("feature_dims", "8 8 4")),
                seq_len=int(s.get("seq_len", "12")),
                motion_seq_len=int(s.get("motion_seq_len", "12")),
                num_segments=int(s.get("num_segments", "3")),
                class_scale=float(s.get("class_scale", "1.0")),
                audio_scale=float(s["audio_scale"]) if s.get("audio_scale") else None,
                unique_scale=float(s.get("unique_scale", "1.0")),
                pair_offset=float(s.get("pair_offset", "0.25")),
                segment_scale=float(s.get("segment_scale", "1.0")),
            )
        if parser.has_section("split"):
            fr = _floats(get("split", "fractions", "0.6 0.2 0.2"))
            if len(fr) != 3:
                raise ConfigError("[split] fractions needs exactly 3 values")
            cfg.split_fractions = fr
            if parser.has_option("split", "seed"):
                cfg.split_seed = parser.getint("split", "seed")
        if parser.has_section("lstm"):
            l = parser["lstm"]
            cfg.lstm = LstmTrainConfig(
                learning_rate=float(l.get("learning_rate", "1e-4")),
                momentum=float(l.get("momentum", "0.9")),
                batch_size=int(l.get("batch_size", "10")),
                max_iterations=int(l.get("max_iterations", "150000")),
                gradient_clip=float(l.get("gradient_clip", "5.0")),
                hidden_dims=_ints(l.get("hidden_dims", "1024 512")),
                init_scale=float(l.get("init_scale", "0.08")),
                forget_bias=float(l.get("forget_bias", "1.0")),
            )
            if parser.has_option("lstm", "spatial_seed"):
                cfg.lstm_spatial_seed = parser.getint("lstm", "spatial_seed")
            if parser.has_option("lstm", "motion_seed"):
                cfg.lstm_motion_seed = parser.getint("lstm", "motion_seed")
        if parser.has_section("fusion"):
            fsec = parser["fusion"]
            cfg.reg = RegConfig(
                lambda1=float(fsec.get("lambda1", "3e-5")),
                lambda2=float(fsec.get("lambda2", "0.0")),
                lambda3=float(fsec.get("lambda3", "0.0")),
                learning_rate=float(fsec.get("learning_rate", "0.7")),
                epochs=int(fsec.get("epochs", "200")),
                batch_size=int(fsec["batch_size"]) if fsec.get("batch_size") else None,
                momentum=float(fsec.get("momentum", "0.0")),
                seed=int(fsec["seed"]) if fsec.get("seed") else None,
                hidden=fsec.get("hidden", "relu"),
                loss=fsec.get("loss", "squared"),
                hidden_units=int(fsec.get("hidden_units", "200")),
                fused_units=int(fsec.get("fused_units", "200")),
                init_scale=float(fsec.get("init_scale", "0.08")),
            )
        if parser.has_section("scorefusion") and parser.has_option("scorefusion", "weights"):
            cfg.fusion_weights = _floats(parser.get("scorefusion", "weights"))
        if parser.has_section("refine"):
            cfg.refine_enabled = getbool("refine", "enabled", False)
            cfg.refine_transpose = getbool("refine", "transpose", False)
            cfg.refine_epsilon = float(get("refine", "epsilon", "0.0"))
            cfg.refine_renormalize = getbool("refine", "renormalize", False)
        if parser.has_section("sweep"):
            cfg.sweep_lambda2 = _floats(get("sweep", "lambda2", "0.0"))
            cfg.sweep_lambda3 = _floats(get("sweep", "lambda3", "0.0"))
    except ValueError as exc:
        raise ConfigError(f"bad value in {path!r}: {exc}") from exc
    return cfg


def config_to_ini(cfg: ExperimentConfig) -> str:
    """Canonical INI text of a fully resolved config."""
    seeds = cfg.resolved_seeds()
    lines = [
        "[experiment]",
        f"seed = {cfg.seed}",
        f"models = {' '.join(cfg.models)}",
    ]
    if cfg.out_dir:
        lines.append(f"out = {cfg.out_dir}")
    if cfg.dataset_path is not None:
        lines += ["", "[data]", f"path = {cfg.dataset_path}"]
    if cfg.synth is not None:
        s = cfg.synth
        pair_text = " ".join(f"{p.first}:{p.second}:{p.signal}" for p in s.pairs)
        lines += [
            "", "[synth]",
            f"num_classes = {s.num_classes}",
            f"samples_per_class = {s.samples_per_class if isinstance(s.samples_per_class, int) else ' '.join(map(str, s.samples_per_class))}",
            f"shared_dim = {s.shared_dim}",
            f"unique_dims = {' '.join(map(str, s.unique_dims))}",
            f"noise_scale = {s.noise_scale!r}",
            f"temporal_mode = {s.temporal_mode}",
            f"pairs = {pair_text}",
            f"seed = {s.seed}",
            f"feature_dims = {' '.join(map(str, s.feature_dims))}",
            f"seq_len = {s.seq_len}",
            f"motion_seq_len = {s.motion_seq_len}",
            f"num_segments = {s.num_segments}",
            f"class_scale = {s.class_scale!r}",
            f"unique_scale = {s.unique_scale!r}",
            f"pair_offset = {s.pair_offset!r}",
            f"segment_scale = {s.segment_scale!r}",
        ]
        if s.audio_scale is not None:
            lines.append(f"audio_scale = {s.audio_scale!r}")
    lines += [
        "", "[split]",
        f"fractions = {' '.join(repr(f) for f in cfg.split_fractions)}",
        f"seed = {seeds['split']}",
        "", "[lstm]",
        f"learning_rate = {cfg.lstm.learning_rate!r}",
        f"momentum = {cfg.lstm.momentum!r}",
        f"batch_size = {cfg.lstm.batch_size}",
        f"max_iterations = {cfg.lstm.max_iterations}",
        f"gradient_clip = {cfg.lstm.gradient_clip!r}",
        f"hidden_dims = {' '.join(map(str, cfg.lstm.hidden_dims))}",
        f"init_scale = {cfg.lstm.init_scale!r}",
        f"forget_bias = {cfg.lstm.forget_bias!r}",
        f"spatial_seed = {seeds['lstm-spatial']}",
        f"motion_seed = {seeds['lstm-motion']}",
        "", "[fusion]",
        f"lambda1 = {cfg.reg.lambda1!r}",
        f"lambda2 = {cfg.reg.lambda2!r}",
        f"lambda3 = {cfg.reg.lambda3!r}",
        f"learning_rate = {cfg.reg.learning_rate!r}",
        f"epochs = {cfg.reg.epochs}",
        f"momentum = {cfg.reg.momentum!r}",
        f"seed = {seeds['fusion']}",
        f"hidden = {cfg.reg.hidden}",
        f"loss = {cfg.reg.loss}",
        f"hidden_units = {cfg.reg.hidden_units}",
        f"fused_units = {cfg.reg.fused_units}",
        f"init_scale = {cfg.reg.init_scale!r}",
    ]
    if cfg.reg.batch_size is not None:
        lines.append(f"batch_size = {cfg.reg.batch_size}")
    if cfg.fusion_weights is not None:
        lines += ["", "[scorefusion]",
                  f"weights = {' '.join(repr(w) for w in cfg.fusion_weights)}"]
    lines += [
        "", "[refine]",
        f"enabled = {str(cfg.refine_enabled).lower()}",
        f"transpose = {str(cfg.refine_transpose).lower()}",
        f"epsilon = {cfg.refine_epsilon!r}",
        f"renormalize = {str(cfg.refine_renormalize).lower()}",
        "", "[sweep]",
        f"lambda2 = {' '.join(repr(v) for v in cfg.sweep_lambda2)}",
        f"lambda3 = {' '.join(repr(v) for v in cfg.sweep_lambda3)}",
        "",
    ]
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# pipeline


class StageFailure(VidfuseError):
    """Wraps a stage error; keeps the original exception as __cause__."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def _say(quiet: bool, msg: str) -> None:
    if not quiet:
        print(msg)


def _labels_of(records: list[VideoRecord]) -> np.ndarray:
    return np.array([r.label for r in records], dtype=np.int64)


def run_experiment(cfg: ExperimentConfig, quiet: bool = False):
    """Execute the full pipeline; returns (EvalReport, artifact paths)."""
    cfg.validate()
    if not cfg.out_dir:
        raise ConfigError("an output directory is required (set [experiment] out or --out)")
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    artifacts: dict[str, str] = {}
    marker = os.path.join(out, "INCOMPLETE")
    seeds = cfg.resolved_seeds()

    def fail(stage: str, exc: Exception):
        with open(marker, "w") as f:
            f.write(f"stage: {stage}\nerror: {exc}\n")
        raise StageFailure(stage, exc) from exc

    with open(os.path.join(out, "config.resolved.cfg"), "w") as f:
        f.write(config_to_ini(cfg))
    artifacts["config"] = os.path.join(out, "config.resolved.cfg")

    # data
    try:
        if cfg.synth is not None:
            manifest, records = synth_generate(cfg.synth)
        else:
            manifest, records = load_dataset(cfg.dataset_path)
        _say(quiet, f"data: {len(records)} records, {manifest.num_classes} classes")
    except Exception as exc:
        fail("data", exc)

    # split
    try:
        if manifest.splits is None:
            manifest = split_dataset(manifest, records, cfg.split_fractions, seeds["split"])
        if cfg.synth is not None:
            dataset_dir = os.path.join(out, "dataset")
            write_dataset(manifest, records, dataset_dir)
            artifacts["dataset"] = dataset_dir
        train_recs = split_records(manifest, records, "train")
        val_recs = split_records(manifest, records, "validation")
        test_recs = split_records(manifest, records, "test")
        if not train_recs or not test_recs:
            raise DataError("train and test splits must be non-empty")
        _say(quiet, f"split: {len(train_recs)} train / {len(val_recs)} validation / {len(test_recs)} test")
    except StageFailure:
        raise
    except Exception as exc:
        fail("split", exc)

    mhash = manifest_hash(manifest)
    chash = class_hash(manifest.classes)
    num_classes = manifest.num_classes
    ckpt_dir = os.path.join(out, "checkpoints")
    score_dir = os.path.join(out, "scores")
    os.makedirs(ckpt_dir, exist_ok=True)
    os.makedirs(score_dir, exist_ok=True)

    # train + score each model
    per_model: dict[str, dict[str, ScoreMatrix]] = {}
    for model in cfg.models:
        try:
            if model == "fusion":
                reg = replace(cfg.reg, seed=seeds["fusion"], num_classes=num_classes)
                result = train_fusion(reg, pooled_batch(train_recs))
                params = result.params
                ckpt_cfg = {"model": model, **_reg_dict(reg)}
                save_checkpoint(os.path.join(ckpt_dir, "fusion.json"), model,
                                params.named_parameters(), ckpt_cfg, mhash)
                scorer = lambda recs, p=params: fusion_forward_batch(p, pooled_batch(recs))
                trace = result.loss_trace
            else:
                stream = "spatial" if model == "lstm-spatial" else "motion"
                ltc = replace(cfg.lstm, seed=seeds[model], num_classes=num_classes)
                result = train_lstm(ltc, stream_sequences(train_recs, stream))
                stack = result.stack
                ckpt_cfg = {"model": model, "input_dim": stack.input_dim,
                            "hidden_dims": list(stack.hidden_dims),
                            "num_classes": stack.num_classes, **_lstm_dict(ltc)}
                save_checkpoint(os.path.join(ckpt_dir, f"{model}.json"), model,
                                stack.named_parameters(), ckpt_cfg, mhash)
                scorer = lambda recs, s=stack, st=stream: score_sequences(
                    s, [seq for seq, _ in stream_sequences(recs, st)])
                trace = result.loss_trace
            artifacts[f"checkpoint.{model}"] = os.path.join(ckpt_dir, f"{model}.json")
            with open(os.path.join(out, f"loss.{model}.txt"), "w") as f:
                f.writelines(repr(v) + "\n" for v in trace)
            _say(quiet, f"train: {model} done ({len(trace)} updates, "
                        f"final loss {trace[-1]:.6f})")
        except StageFailure:
            raise
        except Exception as exc:
            fail(f"train:{model}", exc)

        try:
            per_model[model] = {}
            for split_name, recs in (("validation", val_recs), ("test", test_recs)):
                if not recs:
                    continue
                sm = ScoreMatrix(ids=[r.id for r in recs], scores=scorer(recs),
                                 kind="probabilities", class_hash=chash)
                path = os.path.join(score_dir, f"{model}.{split_name}.scores")
                save_scores(sm, path)
                artifacts[f"scores.{model}.{split_name}"] = path
                per_model[model][split_name] = sm
        except StageFailure:
            raise
        except Exception as exc:
            fail(f"score:{model}", exc)

    # fuse
    try:
        weights = (FusionWeights.normalized(cfg.fusion_weights)
                   if cfg.fusion_weights is not None else FusionWeights.uniform(len(cfg.models)))
        fused: dict[str, ScoreMatrix] = {}
        for split_name in ("validation", "test"):
            sources = [per_model[m][split_name] for m in cfg.models
                       if split_name in per_model[m]]
            if len(sources) == len(cfg.models):
                fused[split_name] = fuse_scores(sources, weights)
                path = os.path.join(score_dir, f"fused.{split_name}.scores")
                save_scores(fused[split_name], path)
                artifacts[f"scores.fused.{split_name}"] = path
        _say(quiet, f"fuse: weights {np.round(weights.weights, 4).tolist()}")
    except StageFailure:
        raise
    except Exception as exc:
        fail("fuse", exc)

    final = fused["test"]

    # refine
    if cfg.refine_enabled:
        try:
            if "validation" not in fused:
                raise DataError("refinement needs a non-empty validation split")
            cm = build_confusion_matrix(fused["validation"], _labels_of(val_recs),
                                        num_classes, smoothing=cfg.refine_epsilon)
            cm_path = os.path.join(out, "confusion.json")
            with open(cm_path, "w") as f:
                json.dump({"class_count": cm.class_count, "source": cm.source,
                           "rows": cm.table.tolist()}, f, sort_keys=True, indent=1)
                f.write("\n")
            artifacts["confusion"] = cm_path
            final = refine_scores(cm, fused["test"], transpose=cfg.refine_transpose,
                                  renormalize=cfg.refine_renormalize)
            path = os.path.join(score_dir, "refined.test.scores")
            save_scores(final, path)
            artifacts["scores.refined.test"] = path
            _say(quiet, "refine: confusion matrix applied")
        except StageFailure:
            raise
        except Exception as exc:
            fail("refine", exc)

    # evaluate
    try:
        test_labels = _labels_of(test_recs)
        report = evaluate(final, test_labels, num_classes)
        report.extras["models"] = list(cfg.models)
        report.extras["refined"] = bool(cfg.refine_enabled)
        report.extras["per_model_accuracy"] = {
            m: accuracy(per_model[m]["test"], test_labels, num_classes)[0]
            for m in cfg.models}
        report.extras["fused_accuracy"] = accuracy(fused["test"], test_labels, num_classes)[0]
        report_path = os.path.join(out, "report.json")
        with open(report_path, "w") as f:
            json.dump(report.to_dict(), f, sort_keys=True, indent=1)
            f.write("\n")
        with open(os.path.join(out, "report.txt"), "w") as f:
            f.write("\n".join(report.summary_lines(manifest.classes)) + "\n")
        artifacts["report"] = report_path
        _say(quiet, "\n".join(report.summary_lines(manifest.classes)))
    except StageFailure:
        raise
    except Exception as exc:
        fail("eval", exc)

    if os.path.exists(marker):
        os.remove(marker)
    return report, artifacts


def _reg_dict(reg: RegConfig) -> dict:
    d = asdict(reg)
    return d


def _lstm_dict(ltc: LstmTrainConfig) -> dict:
    d = asdict(ltc)
    d["hidden_dims"] = list(ltc.hidden_dims)
    return d


# ---------------------------------------------------------------------------
# gradient checking


def finite_difference_gradients(loss_fn, named_params, step: float = 1e-5):
    """Central-difference gradients of loss_fn() w.r.t. live arrays."""
    fd = {}
    for name, arr in named_params:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            plus = loss_fn()
            flat[i] = orig - step
            minus = loss_fn()
            flat[i] = orig
            gflat[i] = (plus - minus) / (2.0 * step)
        fd[name] = g
    return fd


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(|a| + |n|, 1e-6) over all entries."""
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-6)
    return float((np.abs(analytic - numeric) / denom).max())


@dataclass
class GradcheckReport:
    kind: str
    seed: int
    entries: list[tuple[str, float]]
    threshold: float = 1e-4

    @property
    def max_error(self) -> float:
        return max(err for _, err in self.entries)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.threshold

    def lines(self) -> list[str]:
        out = [f"gradcheck {self.kind} seed={self.seed}"]
        for name, err in self.entries:
            flag = "ok  " if err <= self.threshold else "FAIL"
            out.append(f"  {flag} {name:<24} max rel err {err:.3e}")
        out.append(f"{'PASS' if self.passed else 'FAIL'}: max {self.max_error:.3e} "
                   f"(threshold {self.threshold:.0e})")
        return out


def _random_lstm_instance(seed: int):
    rng = RngStream(seed)
    input_dim = 2 + rng.integers(3)
    hidden_dims = (2 + rng.integers(3), 2 + rng.integers(3))
    num_classes = 2 + rng.integers(3)
    steps = 2 + rng.integers(5)
    stack = init_lstm_stack(input_dim, hidden_dims, num_classes, rng,
                            scale=0.4, forget_bias=0.5)
    batch = []
    for k in range(2):
        seq = rng.normal(size=(steps, input_dim))
        batch.append((seq, int(rng.integers(num_classes))))
    return stack, batch


def _random_fusion_instance(seed: int, kink_margin: float = 1e-3):
    # rejection loop: central differences cannot probe a rectifier within
    # +-step of its kink, so redraw until all pre-activations clear a margin
    from .fusion import _forward_cached

    for attempt in range(64):
        rng = RngStream(seed * 1009 + attempt)
        dims = tuple(2 + rng.integers(3) for _ in range(3))
        hidden_units = 2 + rng.integers(3)
        fused_units = 2 + rng.integers(3)
        num_classes = 2 + rng.integers(3)
        n = 3
        params = init_fusion_params(dims[0], dims[1], dims[2], num_classes, rng,
                                    hidden_units=hidden_units, fused_units=fused_units,
                                    init_scale=0.4)
        for name, arr in params.named_parameters():
            if name.endswith(".b"):
                arr += rng.uniform(low=-0.4, high=0.4, size=arr.shape)
        batch = PooledBatch(
            spatial=rng.normal(size=(n, dims[0])),
            motion=rng.normal(size=(n, dims[1])),
            audio=rng.normal(size=(n, dims[2])),
            labels=np.array([rng.integers(num_classes) for _ in range(n)], dtype=np.int64))
        _, cache = _forward_cached(params, batch)
        z_s, z_m, z_a = cache[0], cache[1], cache[2]
        z_f = cache[7]
        margin = min(np.abs(z).min() for z in (z_s, z_m, z_a, z_f))
        if margin > kink_margin:
            return params, batch
    raise NumericalError("could not draw a fusion instance clear of rectifier kinks")


def gradcheck(kind: str, seed: int, step: float = 1e-5, threshold: float = 1e-4,
              corrupt: bool = False) -> GradcheckReport:
    """Compare analytic gradients against central finite differences.

    ``corrupt`` is a test hook that perturbs one analytic gradient entry so
    the check must fail (negative control).
    """
    if kind == "lstm":
        stack, batch = _random_lstm_instance(seed)
        _, analytic = lstm_gradients(stack, batch)
        loss_fn = lambda: lstm_gradients(stack, batch)[0]
        named = stack.named_parameters()
    elif kind == "fusion":
        params, batch = _random_fusion_instance(seed)
        lam1 = 1e-3
        _, analytic = smooth_loss_and_gradients(params, batch, lam1)
        loss_fn = lambda: smooth_loss_and_gradients(params, batch, lam1)[0]
        named = params.named_parameters()
    else:
        raise ConfigError(f"unknown gradcheck kind {kind!r} (expected lstm or fusion)")

    if corrupt:
        first = named[0][0]
        analytic[first] = analytic[first] + 1e-2

    numeric = finite_difference_gradients(loss_fn, named, step)
    entries = [(name, max_relative_error(analytic[name], numeric[name]))
               for name, _ in named]
    return GradcheckReport(kind=kind, seed=seed, entries=entries, threshold=threshold)


# ---------------------------------------------------------------------------
# hyper-parameter sweep


@dataclass
class SweepResult:
    rows: list[dict]
    best_lambda2: float
    best_lambda3: float
    best_accuracy: float

    def lines(self) -> list[str]:
        out = ["lambda2      lambda3      val_acc   zero_rows"]
        for r in self.rows:
            out.append(f"{r['lambda2']:<12g} {r['lambda3']:<12g} {r['val_accuracy']:.4f}    "
                       f"{r['zero_rows']}")
        out.append(f"best: lambda2={self.best_lambda2:g} lambda3={self.best_lambda3:g} "
                   f"val_acc={self.best_accuracy:.4f}")
        return out


def sweep(cfg: ExperimentConfig, quiet: bool = False) -> SweepResult:
    """Grid search of the fusion regularizers on the validation split."""
    cfg.validate()
    if not cfg.sweep_lambda2 or not cfg.sweep_lambda3:
        raise ConfigError("sweep grid must be non-empty")
    if cfg.synth is not None:
        manifest, records = synth_generate(cfg.synth)
    else:
        manifest, records = load_dataset(cfg.dataset_path)
    if manifest.splits is None:
        manifest = split_dataset(manifest, records, cfg.split_fractions,
                                 cfg.resolved_seeds()["split"])
    train_recs = split_records(manifest, records, "train")
    val_recs = split_records(manifest, records, "validation")
    if not train_recs or not val_recs:
        raise DataError("sweep needs non-empty train and validation splits")
    train_batch = pooled_batch(train_recs)
    val_batch = pooled_batch(val_recs)
    num_classes = manifest.num_classes
    fusion_seed = cfg.resolved_seeds()["fusion"]

    rows: list[dict] = []
    best = None
    for lam2 in cfg.sweep_lambda2:
        for lam3 in cfg.sweep_lambda3:
            reg = replace(cfg.reg, lambda2=lam2, lambda3=lam3, seed=fusion_seed,
                          num_classes=num_classes)
            result = train_fusion(reg, train_batch)
            probs = fusion_forward_batch(result.params, val_batch)
            acc = accuracy(probs, val_batch.labels, num_classes)[0]
            row = {"lambda2": lam2, "lambda3": lam3, "val_accuracy": acc,
                   "zero_rows": zero_row_count(result.params.w_fuse)}
            rows.append(row)
            if best is None or acc > best["val_accuracy"]:
                best = row
            _say(quiet, f"sweep: lambda2={lam2:g} lambda3={lam3:g} -> "
                        f"val_acc={acc:.4f} zero_rows={row['zero_rows']}")
    result = SweepResult(rows=rows, best_lambda2=best["lambda2"],
                         best_lambda3=best["lambda3"],
                         best_accuracy=best["val_accuracy"])
    if cfg.out_dir:
        os.makedirs(cfg.out_dir, exist_ok=True)
        with open(os.path.join(cfg.out_dir, "sweep.json"), "w") as f:
            json.dump({"rows": rows, "best": {"lambda2": result.best_lambda2,
                                              "lambda3": result.best_lambda3,
                                              "val_accuracy": result.best_accuracy}},
                      f, sort_keys=True, indent=1)
            f.write("\n")
    return result
