"""Persistence for the trained language-model bundle.

One file carries the customer-side generator model, the agent-side model
used by the fluency scorer, and that model's calibration. Keeping them
together means `evaluate` and `serve` load exactly what `train-lm` produced.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .respond import NGramLM, lm_from_payload, lm_to_payload
from .scorecard import FluencyCalibration


@dataclass
class ModelBundle:
    generator_lm: NGramLM
    fluency_lm: NGramLM
    calibration: FluencyCalibration


def save_model_bundle(bundle: ModelBundle, path: str | Path) -> None:
    payload = {
        "generator": lm_to_payload(bundle.generator_lm),
        "fluency": lm_to_payload(bundle.fluency_lm),
        "calibration": {"mu": bundle.calibration.mu, "sigma": bundle.calibration.sigma},
    }
    Path(path).write_text(json.dumps(payload, ensure_ascii=False), encoding="utf-8")


def load_model_bundle(path: str | Path) -> ModelBundle:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    calib = payload["calibration"]
    return ModelBundle(
        generator_lm=lm_from_payload(payload["generator"]),
        fluency_lm=lm_from_payload(payload["fluency"]),
        calibration=FluencyCalibration(mu=calib["mu"], sigma=calib["sigma"]),
    )
