"""Pipeline configuration: one JSON file drives every subcommand.

A single master seed feeds the simulator and the sampler unless the JSON
sets their seeds explicitly; a --seed flag replaces the master seed and
re-derives the unset ones, so one integer reproduces a whole run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .datasets import KFOLD_BY_OCCASION, ResamplingScheme
from .errors import ConfigurationError
from .hb import DRAW_AVERAGED, PREDICTION_MODES, McmcConfig
from .profit import NopConfig
from .segments import DEFAULT_DISCOUNT_SHIFT
from .simulate import GroundTruthConfig
from .storage import derive_seed

_KNOWN_KEYS = {
    "seed",
    "out_dir",
    "ground_truth",
    "mcmc",
    "nop",
    "ncomp",
    "ncomp_candidates",
    "resampling",
    "include_demographic",
    "elasticity_delta",
    "predict_mode",
}


@dataclass
class PipelineConfig:
    seed: int = 20260809
    out_dir: str = "out"
    ground_truth: GroundTruthConfig = field(default_factory=GroundTruthConfig)
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    nop: NopConfig = field(default_factory=NopConfig)
    ncomp: int = 1
    ncomp_candidates: tuple = (1, 2, 3)
    resampling: ResamplingScheme = field(
        default_factory=lambda: ResamplingScheme(kind=KFOLD_BY_OCCASION, folds=10, repeats=1)
    )
    include_demographic: bool = False
    elasticity_delta: float = DEFAULT_DISCOUNT_SHIFT
    predict_mode: str = DRAW_AVERAGED

    def validate(self) -> "PipelineConfig":
        if self.ncomp < 1:
            raise ConfigurationError("ncomp must be >= 1")
        if not self.ncomp_candidates:
            raise ConfigurationError("ncomp_candidates must be non-empty")
        if self.predict_mode not in PREDICTION_MODES:
            raise ConfigurationError(f"predict_mode must be one of {PREDICTION_MODES}")
        if self.elasticity_delta <= 0:
            raise ConfigurationError("elasticity_delta must be > 0")
        self.ground_truth.validate()
        self.nop.validate()
        self.resampling.validate()
        return self

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "out_dir": self.out_dir,
            "ground_truth": self.ground_truth.to_dict(),
            "mcmc": dict(self.mcmc.__dict__),
            "nop": self.nop.to_dict(),
            "ncomp": self.ncomp,
            "ncomp_candidates": list(self.ncomp_candidates),
            "resampling": {
                "kind": self.resampling.kind,
                "folds": self.resampling.folds,
                "repeats": self.resampling.repeats,
            },
            "include_demographic": self.include_demographic,
            "elasticity_delta": self.elasticity_delta,
            "predict_mode": self.predict_mode,
        }

    @classmethod
    def from_dict(
        cls, raw: dict, seed_override: int | None = None, out_override: str | None = None
    ) -> "PipelineConfig":
        unknown = set(raw) - _KNOWN_KEYS
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        seed = int(raw.get("seed", cls.seed))
        if seed_override is not None:
            seed = int(seed_override)

        gt_raw = dict(raw.get("ground_truth", {}))
        if "seed" not in gt_raw or seed_override is not None:
            gt_raw["seed"] = derive_seed(seed, 11)
        ground_truth = GroundTruthConfig.from_dict(gt_raw)

        mcmc_raw = dict(raw.get("mcmc", {}))
        if "seed" not in mcmc_raw or seed_override is not None:
            mcmc_raw["seed"] = derive_seed(seed, 13)
        mcmc = McmcConfig(**mcmc_raw)

        nop_config = NopConfig.from_dict(raw.get("nop", {}))

        rs_raw = raw.get("resampling", {})
        resampling = ResamplingScheme(
            kind=rs_raw.get("kind", KFOLD_BY_OCCASION),
            folds=int(rs_raw.get("folds", 10)),
            repeats=int(rs_raw.get("repeats", 1)),
        )

        config = cls(
            seed=seed,
            out_dir=str(out_override if out_override is not None else raw.get("out_dir", "out")),
            ground_truth=ground_truth,
            mcmc=mcmc,
            nop=nop_config,
            ncomp=int(raw.get("ncomp", 1)),
            ncomp_candidates=tuple(int(c) for c in raw.get("ncomp_candidates", (1, 2, 3))),
            resampling=resampling,
            include_demographic=bool(raw.get("include_demographic", False)),
            elasticity_delta=float(raw.get("elasticity_delta", DEFAULT_DISCOUNT_SHIFT)),
            predict_mode=str(raw.get("predict_mode", DRAW_AVERAGED)),
        )
        return config.validate()

    @classmethod
    def from_json(
        cls, path, seed_override: int | None = None, out_override: str | None = None
    ) -> "PipelineConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigurationError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config file {path} is not valid JSON: {exc}")
        if not isinstance(raw, dict):
            raise ConfigurationError(f"config file {path} must hold a JSON object")
        return cls.from_dict(raw, seed_override=seed_override, out_override=out_override)
