"""Probes how a model reads out answers from an injected chain of thought.

Statistics and simbot policies are exposed directly; perturbation and run
helpers return plain dicts.
"""

import json

from . import _core
from ._core import (
    IntegrityError,
    PlanError,
    binom_one_sided,
    computebot,
    copybot,
    gini,
    holm_bonferroni,
    hypergeom_tail,
    mcnemar_exact,
    report,
    spearman_exact,
    wilson_ci,
)

__all__ = [
    "IntegrityError",
    "PlanError",
    "binom_one_sided",
    "computebot",
    "copybot",
    "corrupt",
    "distractor",
    "fixture",
    "gini",
    "holm_bonferroni",
    "hypergeom_tail",
    "mcnemar_exact",
    "report",
    "run_plan",
    "shuffle",
    "spearman_exact",
    "verify",
    "wilson_ci",
]

DEFAULT_DELIMITER = "####"


def corrupt(cot, gold, condition, index=0, delimiter=DEFAULT_DELIMITER):
    """Prefix for A, B, C, D_rep, D_trunc, D_blank or no_cot."""
    return json.loads(_core._corruption(cot, str(gold), condition, index, delimiter))


def shuffle(cot, gold, kind, index=0, seed=0, delimiter=DEFAULT_DELIMITER):
    """Shuffled prefix; token_shuffle splits on whitespace."""
    return json.loads(_core._shuffle(cot, str(gold), kind, index, seed, delimiter))


def distractor(cot, gold, kind, framing="F1", index=0, delimiter=DEFAULT_DELIMITER):
    """Clean prefix with a framed trailing distractor ("C1", "F4", ...)."""
    return json.loads(_core._distractor(cot, str(gold), kind, framing, index, delimiter))


def fixture(kind="arithmetic", count=100, seed=0):
    """Synthetic problems as dicts with id, question, gold and cot."""
    return json.loads(_core._fixture(kind, count, seed))


def run_plan(plan_path, out_dir):
    """Runs a plan file; returns run_id, dir, model_calls, tables and artifacts."""
    return json.loads(_core._run(str(plan_path), str(out_dir)))


def verify(out_dir, run_id):
    """Recomputes a stored run; the result's "ok" is False on any mismatch."""
    return json.loads(_core._verify(str(out_dir), run_id))
