"""Turn-based method selection: pick a candidate plan, tune it, preview, accept.

The dialogue reads one answer per prompt through ``ask`` so that a live
terminal and a replayed answers file go through exactly the same code.

Answers understood at the candidate prompt::

    <n>         choose candidate n
    manual      type a chain (e.g. ``SG(m=7)+SNV``) and a feature (e.g. ``PCA``)
    quit        abort

and at the plan prompt::

    accept      keep the plan
    back        return to the candidate list
    key=value   edit the first step that has ``key``
    i:key=value edit step i (1-based)
    feature.key=value
                edit the feature extractor
    quit        abort
"""

from __future__ import annotations

import re
from dataclasses import replace
from typing import Callable, Mapping, Sequence

from .core import SpectralDataset
from .errors import AbortedByUser, ChainError, IrAgentError
from .features import FeatureSpec, parse_feature
from .kb import KbRecord
from .preprocess import MethodPlan, PreprocessStep, _coerce, apply_chain, parse_chain

_EDIT = re.compile(r"(?:(\d+):|(feature)\.)?\s*([A-Za-z_]\w*)\s*=\s*(.+)")


def describe_plan(plan: MethodPlan, records: Mapping[str, KbRecord] | None = None) -> str:
    """One line: chain, feature extractor with key hyperparameters, provenance."""
    source = ", ".join(plan.provenance)
    if records:
        cites = [records[r].citation for r in plan.provenance if r in records and records[r].citation]
        if cites:
            source += f"; {'; '.join(cites)}"
    return f"{plan.chain_label()} -> {plan.feature.describe()}  [{source}]"


def edit_plan(plan: MethodPlan, answer: str) -> MethodPlan:
    """Apply one ``[i:]key=value`` or ``feature.key=value`` edit."""
    m = _EDIT.fullmatch(answer.strip())
    if not m:
        raise ValueError(f"not an edit: {answer!r}")
    index, is_feature, key, raw = m.groups()
    value = [float(v) for v in raw.split(";") if v.strip()] if ";" in raw else _coerce(raw.strip())
    if is_feature:
        params = {**plan.feature.params, key: value}
        return replace(plan, feature=FeatureSpec(plan.feature.kind, params))
    steps = list(plan.steps)
    if index is not None:
        i = int(index) - 1
        if not 0 <= i < len(steps):
            raise ValueError(f"step {index} does not exist (plan has {len(steps)} steps)")
    else:
        hits = [k for k, s in enumerate(steps) if key in s.params]
        if not hits:
            raise ValueError(f"no step takes parameter {key!r}")
        i = hits[0]
    steps[i] = PreprocessStep(steps[i].kind, {**steps[i].params, key: value})
    return replace(plan, steps=tuple(steps))


def preview(plan: MethodPlan, dataset: SpectralDataset, index: int = 0) -> str:
    """Run the chain on one sample and summarise its quality report."""
    if len(dataset) == 0:
        return "preview skipped: dataset is empty"
    target = dataset if any(s.kind == "MSC" for s in plan.steps) else dataset.spectra[index]
    try:
        _, q = apply_chain(target, plan.steps)
    except ChainError as exc:
        return f"preview failed: {exc}"
    lines = [
        f"preview on {dataset.spectra[index].id}: finite={q.finite} "
        f"baseline_flatness={q.baseline_flatness:.4g} noise={q.noise_estimate:.4g}"
    ]
    lines += [f"  warning: {w}" for w in q.warnings]
    return "\n".join(lines)


def run_session(candidates: Sequence[MethodPlan], dataset: SpectralDataset,
                ask: Callable[[str], str], say: Callable[[str], None],
                records: Mapping[str, KbRecord] | None = None) -> MethodPlan:
    """Drive the dialogue until a plan is accepted.

    ``ask`` returns the next answer and raises ``EOFError`` when there are no
    more; running out of answers or answering ``quit`` raises
    :class:`AbortedByUser`.
    """

    def answer(prompt: str) -> str:
        try:
            text = ask(prompt)
        except EOFError:
            raise AbortedByUser("session ended before a plan was accepted") from None
        text = text.strip()
        if text.lower() in ("quit", "q", "exit"):
            raise AbortedByUser("session aborted by the user")
        return text

    while True:
        say("Candidate methods:")
        if not candidates:
            say("  (no knowledge-base candidates; enter a plan manually)")
        for k, plan in enumerate(candidates, 1):
            say(f"  [{k}] {describe_plan(plan, records)}")
        say("Choose a number, 'manual' or 'quit'.")
        choice = answer("select> ")
        if choice.lower() == "manual":
            try:
                steps = parse_chain(answer("chain> "))
                feature = parse_feature(answer("feature> "))
            except ValueError as exc:
                say(f"invalid plan: {exc}")
                continue
            current = MethodPlan(tuple(steps), feature, ("manual",))
        elif choice.isdigit() and 1 <= int(choice) <= len(candidates):
            current = candidates[int(choice) - 1]
        else:
            say(f"unrecognised choice {choice!r}")
            continue

        back = False
        while not back:
            say(f"Plan: {describe_plan(current, records)}")
            say(preview(current, dataset))
            say("Type 'accept', 'back', or an edit such as 'm=7', '2:m=7' or 'feature.n_components=3'.")
            reply = answer("plan> ")
            if reply.lower() == "accept":
                return current
            if reply.lower() == "back":
                back = True
                continue
            try:
                current = edit_plan(current, reply)
            except (ValueError, IrAgentError) as exc:
                say(f"edit rejected: {exc}")


def answers_from(lines: Sequence[str]) -> Callable[[str], str]:
    """An ``ask`` function that replays ``lines`` in order."""
    queue = list(lines)

    def ask(prompt: str) -> str:
        if not queue:
            raise EOFError
        return queue.pop(0)

    return ask
