"""Run configuration: one JSON document with ``data``, ``train`` and ``ablation``
sections, checked against a strict schema (unknown keys are errors)."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from .data import ClassProfile, ShiftParams
from .train import TrainConfig

CONFIG_VERSION = 1

_nonneg = {"type": "number", "minimum": 0}
_posint = {"type": "integer", "minimum": 1}
_nonnegint = {"type": "integer", "minimum": 0}
_seed = {"type": "integer", "minimum": 0, "maximum": 2**63 - 1}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


SHIFT_SCHEMA = _obj({
    "grid": {"type": "integer", "minimum": 2},
    "prototype_amplitude": _nonneg,
    "sigma_object": _nonneg,
    "sigma_eo": _nonneg,
    "speckle_looks": {"type": "number", "exclusiveMinimum": 0},
    "blur": {"type": "number", "minimum": 0, "exclusiveMaximum": 0.5},
    "permutation": {"enum": ["roll", "random"]},
    "random_pose": {"type": "boolean"},
})

DATA_SCHEMA = _obj({
    "seed": _seed,
    "total": _posint,
    "proportions": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                    "minItems": 2},
    "names": {"type": "array", "items": {"type": "string"}, "minItems": 2},
    "val_per_class": _posint,
    "test_per_class": _posint,
    "unlabeled_per_class": _nonnegint,
    "shift": SHIFT_SCHEMA,
})

TRAIN_SCHEMA = _obj({
    "lam": _nonneg,
    "eta": _nonneg,
    "gamma": _nonneg,
    "alpha": {"type": "number", "exclusiveMinimum": 0},
    "epochs": _nonnegint,
    "pretrain_epochs": _nonnegint,
    "batch_size": _posint,
    "lr": {"type": "number", "exclusiveMinimum": 0},
    "lr_factor": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
    "lr_milestones": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
    "num_slices": _posint,
    "swd_p": {"enum": [1, 2]},
    "hidden": {"type": "array", "items": _posint},
    "latent_dim": _posint,
    "unit_norm": {"type": "boolean"},
    "init_seed": _seed,
    "train_seed": _seed,
    "shared_head": {"type": "boolean"},
    "twin": {"type": "boolean"},
    "pretrain": {"type": "boolean"},
    "use_curation": {"type": "boolean"},
    "use_sampler": {"type": "boolean"},
    "use_unlabeled": {"type": "boolean"},
    "unlabeled_source": {"enum": ["pool", "val_test"]},
    "loss": {"enum": ["focal", "cross_entropy"]},
    "head_target": _posint,
    "tail_target": _posint,
    "grad_clip": {"oneOf": [{"type": "null"}, {"type": "number", "exclusiveMinimum": 0}]},
})

ABLATION_SCHEMA = _obj({
    "seeds": _posint,
    "rows": {"type": "array", "items": {"type": "string"}, "minItems": 1},
})

CONFIG_SCHEMA = _obj({
    "format_version": {"const": CONFIG_VERSION},
    "data": DATA_SCHEMA,
    "train": TRAIN_SCHEMA,
    "ablation": ABLATION_SCHEMA,
}, required=("format_version",))


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    seed: int = 0
    profile: ClassProfile = ClassProfile()
    shift: ShiftParams = ShiftParams()
    val_per_class: int = 50
    test_per_class: int = 50
    unlabeled_per_class: int = 400

    def generate_kwargs(self) -> dict:
        return dict(profile=self.profile, shift=self.shift, seed=self.seed,
                    val_per_class=self.val_per_class, test_per_class=self.test_per_class,
                    unlabeled_per_class=self.unlabeled_per_class)


@dataclass(frozen=True)
class AblationConfig:
    seeds: int = 5
    rows: tuple | None = None    # None: all rows


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = DataConfig()
    train: TrainConfig = TrainConfig()
    ablation: AblationConfig = AblationConfig()
    source: str | None = field(default=None, compare=False)

    def to_dict(self) -> dict:
        prof = self.data.profile
        return {
            "format_version": CONFIG_VERSION,
            "data": {"seed": self.data.seed, "total": prof.total,
                     "proportions": list(prof.proportions), "names": list(prof.names),
                     "val_per_class": self.data.val_per_class,
                     "test_per_class": self.data.test_per_class,
                     "unlabeled_per_class": self.data.unlabeled_per_class,
                     "shift": asdict(self.data.shift)},
            "train": self.train.to_dict(),
            "ablation": {"seeds": self.ablation.seeds,
                         **({"rows": list(self.ablation.rows)} if self.ablation.rows else {})},
        }


def _where(error: jsonschema.ValidationError) -> str:
    path = "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in error.absolute_path)
    return path.lstrip(".") or "<root>"


def validate(doc, source: str = "<config>") -> None:
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"{source}: field {_where(e)}: {e.message}" for e in errors]
        raise ConfigError("\n".join(lines))


def parse(text: str, source: str = "<config>") -> RunConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    validate(doc, source)
    return from_dict(doc, source)


def from_dict(doc: dict, source: str | None = None) -> RunConfig:
    d = dict(doc.get("data", {}))
    shift_kw = d.pop("shift", {})
    prof_kw = {}
    if "proportions" in d:
        prof_kw["proportions"] = tuple(d.pop("proportions"))
    if "names" in d:
        prof_kw["names"] = tuple(d.pop("names"))
    if "total" in d:
        prof_kw["total"] = d.pop("total")
    try:
        shift = ShiftParams(**shift_kw)
        if "proportions" in prof_kw and "names" not in prof_kw:
            prof_kw["names"] = tuple(f"class{j}" for j in range(len(prof_kw["proportions"])))
        profile = ClassProfile(**prof_kw)
        data = DataConfig(profile=profile, shift=shift, **d)
        train = TrainConfig.from_dict(doc.get("train", {}))
        a = doc.get("ablation", {})
        ablation = AblationConfig(a.get("seeds", 5), tuple(a["rows"]) if "rows" in a else None)
    except ValueError as exc:
        raise ConfigError(f"{source or '<config>'}: {exc}") from None
    return RunConfig(data, train, ablation, source)


def load(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse(text, str(path))


def packaged(name: str = "default") -> RunConfig:
    """Load one of the configs shipped with the package (``default`` or ``smoke``)."""
    ref = resources.files("mdf") / "configs" / f"{name}.json"
    if not ref.is_file():
        raise ConfigError(f"no packaged config named {name!r}")
    return parse(ref.read_text(), f"<packaged {name}>")
