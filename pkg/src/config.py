"""Configuration management for FinRay Tactile Lab.

Settings live in named sections with typed defaults. An INI file can
override them, and so can `--key value` / `--section.key value` pairs
from the command line. The resolved result is written next to every run.
"""

import configparser
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

# Handle imports - try relative first, then absolute
try:
    from .exceptions import ConfigurationError, FinRayError
    from .imaging import AugmentPolicy, UnwarpCalibration
    from .model_spec import Arch, Head, ModelSpec
    from .simgel import SensorGeometry, load_sim_params
    from .trainer import OptimizerKind, TrainConfig
except ImportError:
    from exceptions import ConfigurationError, FinRayError
    from imaging import AugmentPolicy, UnwarpCalibration
    from model_spec import Arch, Head, ModelSpec
    from simgel import SensorGeometry, load_sim_params
    from trainer import OptimizerKind, TrainConfig

# Short command-line spellings
ALIASES = {
    "out": "output.dir",
    "manifest": "dataset.manifest",
    "checkpoint": "eval.checkpoint",
    "n": "simulate.n",
    "kind": "simulate.kind",
    "arch": "model.arch",
    "archs": "ablation.archs",
    "parallel": "ablation.parallel",
    "frames": "unwarp.input",
}

# Sections searched first when a bare key exists in several sections
COMMAND_SECTIONS = {
    "simulate": ("simulate", "sensor"),
    "train": ("train", "model", "dataset", "imaging"),
    "eval": ("eval", "dataset", "imaging"),
    "ablation": ("train", "ablation", "model", "dataset", "imaging"),
    "grad-check": ("gradcheck",),
    "unwarp": ("unwarp", "calibration"),
}

TRUE_WORDS = ("1", "true", "yes", "on")
FALSE_WORDS = ("0", "false", "no", "off")


def _defaults() -> Dict[str, Dict[str, Any]]:
    canvas = load_sim_params().canvas
    identity = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]
    calibration = {f"h{i}": v for i, v in enumerate(identity)}
    calibration.update({"enabled": False, "k1": 0.0, "k2": 0.0, "height": 0, "width": 0})
    return {
        "simulate": {"kind": "classification", "n": 200, "seed": 0, "noise_std": 0.01,
                     "train_fraction": 0.8, "write_raw": False, "workers": 0},
        "sensor": {"rows": int(canvas["rows"]), "cols": int(canvas["cols"]),
                   "resolution_mm_per_px": float(canvas["resolution_mm_per_px"]),
                   "blur_sigma_px": float(canvas["blur_sigma_px"])},
        "dataset": {"manifest": ""},
        "imaging": {"input_height": 64, "input_width": 64, "feature_height": 32,
                    "feature_width": 24, "flip_lr": True, "brightness_jitter": 0.05,
                    "contrast_jitter": 0.05, "geometric_allowed": False, "max_shift_px": 0},
        "model": {"arch": "Cnn3", "head": "auto", "seed": 0, "widths": "", "blocks": "",
                  "k": 5, "C": 10.0, "gamma": "scale", "degree": 3, "coef0": "",
                  "tol": 1e-3, "max_passes": 200},
        "train": {"epochs": 30, "batch_size": 32, "learning_rate": 0.01,
                  "optimizer": "SgdMomentum", "momentum": 0.9, "seed": 0, "grad_clip": "auto",
                  "early_divergence_threshold": 1000.0, "train_fraction": 0.8, "indenter": "all",
                  "resplit": False},
        "eval": {"checkpoint": "", "split": "val"},
        "ablation": {"archs": ",".join(a.value for a in Arch), "parallel": False, "workers": 0},
        "gradcheck": {"seeds": 20, "eps": 1e-4, "tol": 1e-3},
        "unwarp": {"input": ""},
        "calibration": calibration,
        "output": {"dir": "runs/latest", "log_level": "INFO"},
    }


def _coerce(default: Any, text: str, where: str) -> Any:
    text = text.strip()
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered in TRUE_WORDS:
                return True
            if lowered in FALSE_WORDS:
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError as e:
        raise ConfigurationError(f"Bad value for {where}: {e}")
    return text


def _int_list(text: str, where: str) -> List[int]:
    try:
        return [int(part) for part in text.replace(" ", "").split(",") if part]
    except ValueError:
        raise ConfigurationError(f"{where} must be a comma separated list of integers, got {text!r}")


class Config:
    """Centralized configuration management."""

    def __init__(self, command: str = ""):
        self.app_name = "finray"
        self.command = command
        self.sections: Dict[str, Dict[str, Any]] = _defaults()
        self._defaults = _defaults()

    def get(self, section: str, key: str) -> Any:
        try:
            return self.sections[section][key]
        except KeyError:
            raise ConfigurationError(f"Unknown config key {section}.{key}")

    def set(self, section: str, key: str, value: Any):
        if section not in self._defaults or key not in self._defaults[section]:
            raise ConfigurationError(f"Unknown config key {section}.{key}")
        default = self._defaults[section][key]
        if isinstance(value, str):
            value = _coerce(default, value, f"{section}.{key}")
        self.sections[section][key] = value

    def load_file(self, path) -> "Config":
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path, 'r', encoding='utf-8') as f:
                parser.read_file(f)
        except (OSError, configparser.Error) as e:
            raise ConfigurationError(f"Cannot read config file {path}: {e}")
        for section in parser.sections():
            if section not in self._defaults:
                raise ConfigurationError(f"Unknown config section [{section}] in {path}")
            for key, value in parser.items(section):
                self.set(section, key, value)
        return self

    def resolve_key(self, name: str) -> Tuple[str, str]:
        """Map a bare, dotted, or aliased key to (section, key)."""
        name = ALIASES.get(name, name).replace("-", "_")
        if "." in name:
            section, _, key = name.partition(".")
            if section not in self._defaults or key not in self._defaults[section]:
                raise ConfigurationError(f"Unknown config key {name}")
            return section, key
        for section in COMMAND_SECTIONS.get(self.command, ()):
            if name in self._defaults[section]:
                return section, name
        owners = [s for s, keys in self._defaults.items() if name in keys]
        if not owners:
            raise ConfigurationError(f"Unknown config key {name}")
        if len(owners) > 1:
            raise ConfigurationError(
                f"Ambiguous key {name!r} (in {', '.join(owners)}); use section.{name}")
        return owners[0], name

    def apply_overrides(self, tokens: Sequence[str]) -> "Config":
        """Apply `--key value` pairs; a flag with no value means true."""
        tokens = list(tokens)
        i = 0
        while i < len(tokens):
            token = tokens[i]
            if not token.startswith("--") or len(token) == 2:
                raise ConfigurationError(f"Expected --key value, got {token!r}")
            name, has_value, value = token[2:].partition("=")
            if not has_value:
                if i + 1 < len(tokens) and not tokens[i + 1].startswith("--"):
                    value = tokens[i + 1]
                    i += 1
                else:
                    value = "true"
            section, key = self.resolve_key(name)
            self.set(section, key, value)
            i += 1
        return self

    def to_ini(self) -> str:
        lines = []
        for section, values in self.sections.items():
            lines.append(f"[{section}]")
            for key, value in values.items():
                text = str(value).lower() if isinstance(value, bool) else repr(value) \
                    if isinstance(value, float) else str(value)
                lines.append(f"{key} = {text}")
            lines.append("")
        return "\n".join(lines)

    def write_resolved(self, out_dir) -> Path:
        path = Path(out_dir) / "resolved_config.ini"
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(self.to_ini(), encoding='utf-8')
        except OSError as e:
            raise ConfigurationError(f"Cannot write resolved config to {path}: {e}")
        return path

    @property
    def output_dir(self) -> Path:
        return Path(self.get("output", "dir"))

    def sensor_geometry(self) -> SensorGeometry:
        values = self.sections["sensor"]
        try:
            return SensorGeometry.from_params(
                rows=values["rows"], cols=values["cols"],
                resolution_mm_per_px=values["resolution_mm_per_px"],
                blur_sigma_px=values["blur_sigma_px"])
        except FinRayError as e:
            raise ConfigurationError(f"Invalid [sensor] settings: {e}")

    def archs(self) -> List[Arch]:
        text = self.get("ablation", "archs")
        return [Arch.parse(part) for part in text.split(",") if part.strip()]

    def head(self, kind: Optional[str] = None) -> Head:
        text = self.get("model", "head")
        if text.lower() == "auto":
            if kind is None:
                raise ConfigurationError("model.head is auto but no dataset kind is known")
            return Head.for_kind(kind)
        for head in Head:
            if head.value.lower() == text.lower():
                return head
        raise ConfigurationError(f"Unknown head {text!r}")

    def model_spec(self, arch: Optional[Arch] = None, head: Optional[Head] = None) -> ModelSpec:
        values = self.sections["model"]
        arch = arch or Arch.parse(values["arch"])
        head = head or self.head()
        hp: Dict[str, Any] = {}
        if arch.is_network:
            hp["seed"] = values["seed"]
            if values["widths"]:
                hp["widths"] = _int_list(values["widths"], "model.widths")
            if values["blocks"]:
                hp["blocks"] = _int_list(values["blocks"], "model.blocks")[0]
        elif arch == Arch.KNN:
            hp["k"] = values["k"]
        else:
            gamma = values["gamma"]
            hp.update({"C": values["C"], "degree": values["degree"], "tol": values["tol"],
                       "max_passes": values["max_passes"],
                       "gamma": None if gamma.lower() == "scale" else _coerce(1.0, gamma, "model.gamma")})
            if values["coef0"]:
                hp["coef0"] = _coerce(1.0, values["coef0"], "model.coef0")
        return ModelSpec(arch, head, hp)

    def augment_policy(self, kind: str) -> AugmentPolicy:
        values = self.sections["imaging"]
        if kind == "regression":
            # photometric only: flips and shifts would move the contact
            return AugmentPolicy(False, values["brightness_jitter"], values["contrast_jitter"])
        return AugmentPolicy(values["flip_lr"], values["brightness_jitter"],
                             values["contrast_jitter"], values["geometric_allowed"],
                             values["max_shift_px"])

    def train_config(self, spec: ModelSpec) -> TrainConfig:
        values = self.sections["train"]
        clip_text = str(values["grad_clip"]).lower()
        if clip_text == "auto":
            grad_clip = TrainConfig.default_clip(spec)
        elif clip_text in ("none", "off", ""):
            grad_clip = None
        else:
            grad_clip = _coerce(1.0, clip_text, "train.grad_clip")
        imaging = self.sections["imaging"]
        try:
            return TrainConfig(
                epochs=values["epochs"], batch_size=values["batch_size"],
                learning_rate=values["learning_rate"],
                optimizer=OptimizerKind(values["optimizer"]), momentum=values["momentum"],
                seed=values["seed"], grad_clip=grad_clip,
                early_divergence_threshold=values["early_divergence_threshold"],
                augment=self.augment_policy(spec.head.label_kind),
                input_size=(imaging["input_height"], imaging["input_width"]),
                feature_size=(imaging["feature_height"], imaging["feature_width"]),
                indenter=values["indenter"])
        except ValueError as e:
            raise ConfigurationError(f"Invalid [train] settings: {e}")
        except FinRayError as e:
            raise ConfigurationError(f"Invalid [train] settings: {e}")

    def calibration(self, raw_size: Optional[Tuple[int, int]] = None) -> Optional[UnwarpCalibration]:
        """The configured unwarp calibration, or None when disabled."""
        values = self.sections["calibration"]
        if not values["enabled"]:
            return None
        block = dict(values)
        if not block["height"] or not block["width"]:
            if raw_size is None:
                raise ConfigurationError("calibration.height/width are required")
            block["height"], block["width"] = raw_size
        try:
            return UnwarpCalibration.from_config(block)
        except FinRayError as e:
            raise ConfigurationError(f"Invalid [calibration] block: {e}")

    def items(self) -> Iterable[Tuple[str, Dict[str, Any]]]:
        return self.sections.items()
