"""Flat key = value experiment configuration.

The config file is plain text, one `key = value` per line, `#` comments.
Every run writes back its fully resolved config, and re-running from that
file reproduces the run exactly. Keys:

  benchmark                 gmm8-ring | gmm2-imbalanced | inline
  gmm.weights               comma-separated (inline benchmark only)
  gmm.means                 rows separated by ';', coords by ',' (inline only)
  gmm.variances             comma-separated (inline only)
  schedule.kind             linear | cosine
  schedule.timesteps        positive integer
  schedule.beta_start       float (linear; empty = scaled DDPM default)
  schedule.beta_end         float (linear; empty = scaled DDPM default)
  schedule.cosine_offset    float
  schedule.respace          0 (off) or target step count
  model.kind                analytic | mlp
  model.checkpoint          path (mlp only)
  guidance.kind             self | naive
  guidance.w                float >= 0
  guidance.schedule         fixed | switch_off | variance
  guidance.t_mid            timestep (switch_off only; 0 = unset)
  guidance.interval         intermittent rate n
  guidance.s_fraction       float in (0, 1)
  guidance.sg               none | sg_first | sg_second
  guidance.distance         squared_error
  guidance.normalize        true | false
  guidance.mc_samples       positive integer
  run.chains                positive integer
  run.seed                  non-negative integer
  run.trace                 true | false
  eval.knn_k                positive integer
  eval.lof_k                positive integer
  eval.reference            real | generated | pooled
  eval.reference_size       positive integer
  eval.metric_t_fraction    float in (0, 1); timestep for the per-sample metric
  eval.metric_mc            MC draws for the per-sample metric
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import ConfigError
from .gmm import GmmSpec, benchmark
from .sampler import GuidanceConfig
from .schedule import NoiseSchedule, build_schedule, respace


@dataclass(frozen=True)
class ExperimentConfig:
    benchmark: str = "gmm8-ring"
    gmm_weights: str = ""
    gmm_means: str = ""
    gmm_variances: str = ""
    schedule_kind: str = "cosine"
    schedule_timesteps: int = 250
    schedule_beta_start: float = 0.0  # 0 = scaled default
    schedule_beta_end: float = 0.0
    schedule_cosine_offset: float = 0.008
    schedule_respace: int = 0
    model_kind: str = "analytic"
    model_checkpoint: str = ""
    guidance_kind: str = "self"
    guidance_w: float = 0.2
    guidance_schedule: str = "variance"
    guidance_t_mid: int = 0
    guidance_interval: int = 5
    guidance_s_fraction: float = 0.8
    guidance_sg: str = "sg_second"
    guidance_distance: str = "squared_error"
    guidance_normalize: bool = True
    guidance_mc_samples: int = 1
    run_chains: int = 1000
    run_seed: int = 0
    run_trace: bool = False
    eval_knn_k: int = 5
    eval_lof_k: int = 20
    eval_reference: str = "pooled"
    eval_reference_size: int = 4000
    eval_metric_t_fraction: float = 0.5
    eval_metric_mc: int = 1

    # ---- realized objects -------------------------------------------------

    def gmm_spec(self) -> GmmSpec:
        if self.benchmark != "inline":
            return benchmark(self.benchmark)
        try:
            w = np.array([float(v) for v in self.gmm_weights.split(",")])
            means = np.array(
                [[float(v) for v in row.split(",")] for row in self.gmm_means.split(";")]
            )
            var = np.array([float(v) for v in self.gmm_variances.split(",")])
        except ValueError as exc:
            raise ConfigError(f"malformed inline GMM spec: {exc}") from exc
        return GmmSpec(weights=w, means=means, variances=var)

    def noise_schedule(self) -> NoiseSchedule:
        sched = build_schedule(
            self.schedule_kind,
            self.schedule_timesteps,
            beta_start=self.schedule_beta_start or None,
            beta_end=self.schedule_beta_end or None,
            cosine_offset=self.schedule_cosine_offset,
        )
        if self.schedule_respace:
            sched = respace(sched, self.schedule_respace)
        return sched

    def guidance_config(self) -> GuidanceConfig:
        if self.guidance_distance != "squared_error":
            raise ConfigError(
                f"config files support only the squared_error distance, got {self.guidance_distance!r}"
            )
        return GuidanceConfig(
            w=self.guidance_w,
            schedule_mode=self.guidance_schedule,
            t_mid=self.guidance_t_mid or None,
            n=self.guidance_interval,
            s_fraction=self.guidance_s_fraction,
            sg_mode=self.guidance_sg,
            normalize_linf=self.guidance_normalize,
            mc_samples=self.guidance_mc_samples,
            kind=self.guidance_kind,
        )

    # ---- flat text form ---------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for name, key in _KEYMAP:
            val = getattr(self, name)
            if isinstance(val, bool):
                val = "true" if val else "false"
            elif isinstance(val, float):
                val = repr(val)
            lines.append(f"{key} = {val}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, val = (part.strip() for part in line.split("=", 1))
            if key not in _KEY_TO_FIELD:
                raise ConfigError(f"line {lineno}: unknown config key {key!r}")
            values[_KEY_TO_FIELD[key]] = val
        return cls().with_overrides(values)

    def with_overrides(self, values: dict) -> "ExperimentConfig":
        """Apply string-valued overrides (field name or config key)."""
        coerced = {}
        types = {f.name: f.type for f in fields(self)}
        for name, val in values.items():
            if name in _KEY_TO_FIELD:
                name = _KEY_TO_FIELD[name]
            if name not in types:
                raise ConfigError(f"unknown config key {name!r}")
            current = getattr(self, name)
            if isinstance(current, bool):
                if str(val).lower() not in ("true", "false"):
                    raise ConfigError(f"{name} expects true/false, got {val!r}")
                coerced[name] = str(val).lower() == "true"
            elif isinstance(current, int):
                try:
                    coerced[name] = int(val)
                except ValueError as exc:
                    raise ConfigError(f"{name} expects an integer, got {val!r}") from exc
            elif isinstance(current, float):
                try:
                    coerced[name] = float(val)
                except ValueError as exc:
                    raise ConfigError(f"{name} expects a number, got {val!r}") from exc
            else:
                coerced[name] = str(val)
        cfg = replace(self, **coerced)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.benchmark not in ("gmm8-ring", "gmm2-imbalanced", "inline"):
            raise ConfigError(f"unknown benchmark {self.benchmark!r}")
        if self.model_kind not in ("analytic", "mlp"):
            raise ConfigError(f"unknown model kind {self.model_kind!r}")
        if self.run_chains < 1:
            raise ConfigError("run.chains must be >= 1")
        if self.run_seed < 0:
            raise ConfigError("run.seed must be non-negative")
        if self.eval_reference not in ("real", "generated", "pooled"):
            raise ConfigError(f"unknown reference mode {self.eval_reference!r}")
        if not (0.0 < self.eval_metric_t_fraction < 1.0):
            raise ConfigError("eval.metric_t_fraction must lie in (0, 1)")
        self.gmm_spec()
        self.noise_schedule()
        self.guidance_config()

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


_KEYMAP = [
    ("benchmark", "benchmark"),
    ("gmm_weights", "gmm.weights"),
    ("gmm_means", "gmm.means"),
    ("gmm_variances", "gmm.variances"),
    ("schedule_kind", "schedule.kind"),
    ("schedule_timesteps", "schedule.timesteps"),
    ("schedule_beta_start", "schedule.beta_start"),
    ("schedule_beta_end", "schedule.beta_end"),
    ("schedule_cosine_offset", "schedule.cosine_offset"),
    ("schedule_respace", "schedule.respace"),
    ("model_kind", "model.kind"),
    ("model_checkpoint", "model.checkpoint"),
    ("guidance_kind", "guidance.kind"),
    ("guidance_w", "guidance.w"),
    ("guidance_schedule", "guidance.schedule"),
    ("guidance_t_mid", "guidance.t_mid"),
    ("guidance_interval", "guidance.interval"),
    ("guidance_s_fraction", "guidance.s_fraction"),
    ("guidance_sg", "guidance.sg"),
    ("guidance_distance", "guidance.distance"),
    ("guidance_normalize", "guidance.normalize"),
    ("guidance_mc_samples", "guidance.mc_samples"),
    ("run_chains", "run.chains"),
    ("run_seed", "run.seed"),
    ("run_trace", "run.trace"),
    ("eval_knn_k", "eval.knn_k"),
    ("eval_lof_k", "eval.lof_k"),
    ("eval_reference", "eval.reference"),
    ("eval_reference_size", "eval.reference_size"),
    ("eval_metric_t_fraction", "eval.metric_t_fraction"),
    ("eval_metric_mc", "eval.metric_mc"),
]
_KEY_TO_FIELD = {key: name for name, key in _KEYMAP}
