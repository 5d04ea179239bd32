"""JSON reports for the command-line tools.

Serialization is canonical: keys in schema order, floats rounded to 12
significant digits, so parsing a report and writing it again reproduces
the same bytes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

__all__ = ["RunReport", "canonical", "dumps", "load_schema", "validate"]

FLOAT_DIGITS = 12


def _round(x: float) -> float:
    if not math.isfinite(x):
        raise ValueError(f"cannot serialize non-finite value {x!r}")
    return float(f"{x:.{FLOAT_DIGITS}g}")


def canonical(obj):
    """Convert to JSON-ready builtins with floats rounded to 12 significant digits."""
    if isinstance(obj, dict):
        return {str(k): canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [canonical(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return canonical(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _round(float(obj))
    if obj is None or isinstance(obj, str):
        return obj
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj) -> str:
    return json.dumps(canonical(obj), indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def load_schema(name: str = "run_report") -> dict:
    text = resources.files("blunderfit").joinpath("schemas", f"{name}.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def validate(doc: dict, name: str = "run_report") -> None:
    import jsonschema

    jsonschema.validate(doc, load_schema(name))


def _pairs(items):
    return [{"id": i, "normalized_residual": r} for i, r in items]


@dataclass
class RunReport:
    """Everything a ``fit`` run produced, in serializable form."""

    input: dict
    config: dict
    iterations: list
    final: dict
    timing_ms: float

    @classmethod
    def from_outcome(cls, outcome, *, path, n, p, model, timing_ms):
        iterations = [
            {
                "iteration": rec.iteration,
                "n_in": rec.n_in,
                "mode": rec.mode,
                "kappa": rec.kappa,
                "L": rec.l_count,
                "k_gamma": rec.k_gamma,
                "sigma_scale": rec.sigma_scale,
                "excluded_step3": _pairs(rec.excluded_step3),
                "excluded_step4": _pairs(rec.excluded_step4),
                "parameters_after": list(rec.parameters_after),
            }
            for rec in outcome.trace
        ]
        sol = outcome.final_solution
        final = {
            "parameters": sol.parameters.tolist(),
            "covariance": sol.covariance.tolist(),
            "variance_factor": sol.variance_factor,
            "retained_ids": list(outcome.retained_ids),
            "excluded": [{"id": e.id, "iteration": e.iteration, "reason": e.reason} for e in outcome.excluded],
            "stop_reason": outcome.stop_reason,
            "converged": outcome.converged,
        }
        doc = {
            "input": {"path": str(path), "N": n, "p": p, "model": model},
            "config": outcome.config.as_dict(),
            "iterations": iterations,
            "final": final,
            "timing_ms": timing_ms,
        }
        return cls.from_dict(canonical(doc))

    @classmethod
    def from_dict(cls, doc: dict) -> "RunReport":
        return cls(
            input=doc["input"],
            config=doc["config"],
            iterations=doc["iterations"],
            final=doc["final"],
            timing_ms=doc["timing_ms"],
        )

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return {
            "input": self.input,
            "config": self.config,
            "iterations": self.iterations,
            "final": self.final,
            "timing_ms": self.timing_ms,
        }

    def to_json(self) -> str:
        return dumps(self.to_dict())
