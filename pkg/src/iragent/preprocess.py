"""Spectral preprocessing kernels and chain execution.

Every transform is a pure ``Spectrum -> Spectrum`` function except MSC, which
needs the whole batch. :func:`apply_chain` composes them left to right.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, solveh_banded

from .core import Spectrum, SpectralDataset
from .errors import (
    ChainError,
    ConstantSpectrum,
    DegenerateRegression,
    NonUniformGrid,
    SingularSystem,
    WindowTooLarge,
)
from .features import FeatureSpec

KINDS = (
    "AsLS",
    "SavitzkyGolay",
    "MinMax",
    "SNV",
    "MSC",
    "Detrend",
    "FirstDerivative",
    "SecondDerivative",
)

DEFAULT_PARAMS = {
    "AsLS": {"lam": 1e5, "p": 0.01, "iters": 10},
    "SavitzkyGolay": {"m": 5, "degree": 2, "deriv": 0},
    "MinMax": {},
    "SNV": {},
    "MSC": {"reference": "mean"},
    "Detrend": {"order": 1},
    "FirstDerivative": {},
    "SecondDerivative": {},
}

# Shorthand used in literature records and typed at the session prompt.
ALIASES = {
    "asls": ("AsLS", {}),
    "bc": ("AsLS", {}),
    "baseline": ("AsLS", {}),
    "sg": ("SavitzkyGolay", {}),
    "savgol": ("SavitzkyGolay", {}),
    "savitzkygolay": ("SavitzkyGolay", {}),
    "sgfd": ("SavitzkyGolay", {"deriv": 1}),
    "sgsd": ("SavitzkyGolay", {"deriv": 2}),
    "minmax": ("MinMax", {}),
    "norm": ("MinMax", {}),
    "normalization": ("MinMax", {}),
    "snv": ("SNV", {}),
    "msc": ("MSC", {}),
    "detrend": ("Detrend", {}),
    "dt": ("Detrend", {}),
    "fd": ("FirstDerivative", {}),
    "d1": ("FirstDerivative", {}),
    "firstderivative": ("FirstDerivative", {}),
    "sd": ("SecondDerivative", {}),
    "d2": ("SecondDerivative", {}),
    "secondderivative": ("SecondDerivative", {}),
}


def _check_params(kind: str, params: dict) -> None:
    if kind == "AsLS":
        if not params["lam"] > 0:
            raise ValueError("AsLS lam must be > 0")
        if not 0 < params["p"] < 1:
            raise ValueError("AsLS p must lie in (0, 1)")
        if int(params["iters"]) < 1:
            raise ValueError("AsLS iters must be >= 1")
    elif kind == "SavitzkyGolay":
        m, degree, deriv = int(params["m"]), int(params["degree"]), int(params["deriv"])
        if degree < 1:
            raise ValueError("Savitzky-Golay degree must be >= 1")
        if 2 * m + 1 < degree + 2:
            raise ValueError(f"window 2m+1={2 * m + 1} must be >= degree+2={degree + 2}")
        if deriv not in (0, 1, 2) or deriv > degree:
            raise ValueError("deriv must be 0, 1 or 2 and not exceed the degree")
    elif kind == "Detrend":
        if int(params["order"]) not in (1, 2):
            raise ValueError("Detrend order must be 1 or 2")
    elif kind == "MSC":
        if params["reference"] != "mean" and not isinstance(params["reference"], (list, tuple, np.ndarray)):
            raise ValueError("MSC reference must be 'mean' or an intensity list")


@dataclass(frozen=True)
class PreprocessStep:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown preprocessing kind {self.kind!r}")
        unknown = set(self.params) - set(DEFAULT_PARAMS[self.kind])
        if unknown:
            raise ValueError(f"{self.kind} does not take parameters {sorted(unknown)}")
        merged = {**DEFAULT_PARAMS[self.kind], **self.params}
        _check_params(self.kind, merged)
        object.__setattr__(self, "params", merged)

    def to_json(self) -> dict:
        return {"kind": self.kind, **self.params}

    @classmethod
    def from_json(cls, obj: dict) -> "PreprocessStep":
        obj = dict(obj)
        return cls(obj.pop("kind"), obj)

    def describe(self) -> str:
        args = ", ".join(f"{k}={v}" for k, v in self.params.items() if k != "reference")
        return f"{self.kind}({args})" if args else self.kind


def _coerce(value: str):
    for conv in (int, float):
        try:
            return conv(value)
        except ValueError:
            pass
    return value


def resolve_step(token: str) -> PreprocessStep:
    """Resolve ``"SG"``, ``"SGFD"``, ``"SavitzkyGolay(m=7)"`` etc. to a step."""
    m = re.fullmatch(r"\s*([A-Za-z0-9_\-]+)\s*(?:\((.*)\))?\s*", token)
    if not m:
        raise ValueError(f"cannot parse preprocessing step {token!r}")
    name, argstr = m.group(1), m.group(2)
    key = name.lower().replace("-", "").replace("_", "")
    if key not in ALIASES:
        raise ValueError(f"unknown preprocessing step {name!r}")
    kind, preset = ALIASES[key]
    params = dict(preset)
    if argstr:
        for part in argstr.split(","):
            if part.strip():
                k, _, v = part.partition("=")
                params[k.strip()] = _coerce(v.strip())
    return PreprocessStep(kind, params)


def parse_chain(text: str) -> list[PreprocessStep]:
    """``"SG+SNV"`` -> ``[SavitzkyGolay, SNV]``; empty string or ``"none"`` -> ``[]``."""
    text = text.strip()
    if not text or text.lower() in {"none", "raw", "-"}:
        return []
    parts, depth, cur = [], 0, ""
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "+" and depth == 0:
            parts.append(cur)
            cur = ""
        else:
            cur += ch
    parts.append(cur)
    return [resolve_step(p) for p in parts]


@dataclass(frozen=True)
class MethodPlan:
    """Ordered preprocessing chain plus a feature extractor. An empty ``steps``
    tuple is the explicit "no preprocessing" chain."""

    steps: tuple
    feature: FeatureSpec
    provenance: tuple = ("manual",)

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        object.__setattr__(self, "provenance", tuple(self.provenance) or ("manual",))
        if not isinstance(self.feature, FeatureSpec):
            raise TypeError("feature must be a FeatureSpec")

    def to_json(self) -> dict:
        return {
            "steps": [s.to_json() for s in self.steps],
            "feature": self.feature.to_json(),
            "provenance": list(self.provenance),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MethodPlan":
        prov = obj.get("provenance", ["manual"])
        if isinstance(prov, str):
            prov = [prov]
        return cls(
            tuple(PreprocessStep.from_json(s) for s in obj["steps"]),
            FeatureSpec.from_json(obj["feature"]),
            tuple(prov),
        )

    def chain_label(self) -> str:
        return " + ".join(s.describe() for s in self.steps) or "(no preprocessing)"


@dataclass(frozen=True)
class QualityReport:
    finite: bool
    baseline_flatness: float
    noise_estimate: float
    warnings: tuple = ()

    def to_json(self) -> dict:
        return {
            "finite": self.finite,
            "baseline_flatness": self.baseline_flatness,
            "noise_estimate": self.noise_estimate,
            "warnings": list(self.warnings),
        }


# -- baseline correction --------------------------------------------------------------


def _penalty_bands(n: int, lam: float) -> np.ndarray:
    """Upper banded form (3 x n) of lam * D'D for the second-difference operator."""
    c = (1.0, -2.0, 1.0)
    r = np.arange(n - 2)
    d = np.zeros(n)
    off1 = np.zeros(n - 1)
    off2 = np.zeros(n - 2)
    for a in range(3):
        np.add.at(d, r + a, c[a] * c[a])
    for a in range(2):
        np.add.at(off1, r + a, c[a] * c[a + 1])
    off2 += c[0] * c[2]
    ab = np.zeros((3, n))
    ab[2] = d * lam
    ab[1, 1:] = off1 * lam
    ab[0, 2:] = off2 * lam
    return ab


def asls_objective(y, z, lam: float, p: float) -> float:
    """Asymmetrically weighted fit term plus ``lam`` times the squared second differences."""
    y = np.asarray(y, float)
    z = np.asarray(z, float)
    r = y - z
    w = np.where(r > 0, p, 1.0 - p)
    return float(np.sum(w * r * r) + lam * np.sum(np.diff(z, 2) ** 2))


def asls_baseline(s: Spectrum, lam: float = 1e5, p: float = 0.01, iters: int = 10,
                  return_history: bool = False):
    """Asymmetric least squares baseline.

    Each iteration solves ``(W + lam D'D) z = W y`` with weights ``p`` where the
    data lies above the current baseline and ``1 - p`` elsewhere. The first
    solve uses unit weights. Later updates are damped (step halving) whenever a
    full reweighting step would raise the objective, so the recorded objective
    history never increases; undamped steps are the usual case.

    Returns ``(corrected, baseline)`` and, with ``return_history``, the list of
    objective values after each iteration.
    """
    _check_params("AsLS", {"lam": lam, "p": p, "iters": iters})
    y = s.intensities
    n = y.size
    pen = _penalty_bands(n, lam)

    def solve(w):
        ab = pen.copy()
        ab[2] += w
        try:
            z = solveh_banded(ab, w * y)
        except (LinAlgError, ValueError) as exc:
            raise SingularSystem(f"AsLS system could not be solved: {exc}") from None
        if not np.all(np.isfinite(z)):
            raise SingularSystem("AsLS solve produced non-finite values")
        return z

    z = solve(np.ones(n))
    obj = asls_objective(y, z, lam, p)
    history = [obj]
    for _ in range(int(iters) - 1):
        w = np.where(y > z, p, 1.0 - p)
        cand = solve(w)
        step = cand - z
        alpha = 1.0
        while True:
            trial = z + alpha * step
            trial_obj = asls_objective(y, trial, lam, p)
            if trial_obj <= obj:
                z, obj = trial, trial_obj
                break
            alpha *= 0.5
            if alpha < 1e-12:
                break
        history.append(obj)

    corrected = s.with_intensities(y - z)
    baseline = s.with_intensities(z)
    if return_history:
        return corrected, baseline, history
    return corrected, baseline


# -- smoothing ---------------------------------------------------------------------------


def _sg_rows(m: int, degree: int, deriv: int, offsets: np.ndarray) -> np.ndarray:
    """Coefficient rows evaluating the ``deriv``-th derivative of a local
    least-squares polynomial at each position ``offsets`` within a window of
    2m+1 samples indexed -m..m."""
    x = np.arange(-m, m + 1, dtype=float)
    A = np.vander(x, degree + 1, increasing=True)
    pinv = np.linalg.pinv(A)
    # derivative of sum_k a_k x^k at x0: sum_k a_k * k!/(k-d)! * x0^(k-d)
    rows = np.zeros((offsets.size, x.size))
    for k in range(deriv, degree + 1):
        fac = math.factorial(k) / math.factorial(k - deriv)
        rows += np.outer(fac * offsets ** (k - deriv), pinv[k])
    return rows


def savitzky_golay(s: Spectrum, m: int = 5, degree: int = 2, deriv: int = 0) -> Spectrum:
    """Savitzky-Golay smoothing (or smoothed derivative) over 2m+1 points.

    Interior points use the fixed convolution weights. Within ``m`` points of
    either end the fit uses the first (last) complete window and evaluates the
    polynomial at the off-centre position, so no padding values are invented.
    """
    m, degree, deriv = int(m), int(degree), int(deriv)
    _check_params("SavitzkyGolay", {"m": m, "degree": degree, "deriv": deriv})
    y = s.intensities
    n = y.size
    w = 2 * m + 1
    if n < w:
        raise WindowTooLarge(f"window of {w} points exceeds spectrum length {n}")
    if deriv and not s.is_uniform:
        raise NonUniformGrid("Savitzky-Golay derivatives need a uniform wavelength grid")

    centre = _sg_rows(m, degree, deriv, np.array([0.0]))[0]
    out = np.empty(n)
    out[m:n - m] = np.correlate(y, centre, mode="valid")
    edge = _sg_rows(m, degree, deriv, np.arange(-m, 0, dtype=float))
    out[:m] = edge @ y[:w]
    tail = _sg_rows(m, degree, deriv, np.arange(1, m + 1, dtype=float))
    out[n - m:] = tail @ y[n - w:]
    if deriv:
        out /= s.step ** deriv
    return s.with_intensities(out)


# -- scaling -----------------------------------------------------------------------------


def _scale_tol(y: np.ndarray) -> float:
    return 1e-12 * max(float(np.max(np.abs(y))), np.finfo(float).tiny)


def minmax_normalize(s: Spectrum) -> Spectrum:
    y = s.intensities
    lo, hi = float(y.min()), float(y.max())
    if hi - lo <= _scale_tol(y):
        raise ConstantSpectrum(f"spectrum {s.id!r} has zero range")
    return s.with_intensities((y - lo) / (hi - lo))


def snv(s: Spectrum) -> Spectrum:
    """Standard normal variate with the sample (n-1) standard deviation."""
    y = s.intensities
    sd = float(np.std(y, ddof=1))
    if sd <= _scale_tol(y):
        raise ConstantSpectrum(f"spectrum {s.id!r} has zero standard deviation")
    return s.with_intensities((y - y.mean()) / sd)


def msc(batch: SpectralDataset, reference="mean") -> SpectralDataset:
    """Multiplicative scatter correction against the batch mean or an explicit reference."""
    X = batch.X
    if isinstance(reference, str):
        if reference != "mean":
            raise ValueError("reference must be 'mean' or a spectrum")
        if len(batch) < 2:
            raise ValueError("MSC against the mean needs at least 2 spectra")
        ref = X.mean(axis=0)
    else:
        ref = np.asarray(reference.intensities if isinstance(reference, Spectrum) else reference, float)
        if ref.shape != (X.shape[1],):
            raise ValueError("reference spectrum length does not match the batch")
    rc = ref - ref.mean()
    ss = float(rc @ rc)
    if ss <= _scale_tol(ref) ** 2:
        raise DegenerateRegression("reference spectrum is constant")
    out = np.empty_like(X)
    for i, row in enumerate(X):
        b = float(rc @ (row - row.mean())) / ss
        a = row.mean() - b * ref.mean()
        if abs(b) < 1e-12:
            raise DegenerateRegression(f"sample {batch.ids[i]!r}: slope {b:.3g} on reference")
        out[i] = (row - a) / b
    return batch.with_matrix(out)


def detrend(s: Spectrum, order: int = 1) -> Spectrum:
    """Subtract the least-squares polynomial of the given order in wavelength."""
    order = int(order)
    _check_params("Detrend", {"order": order})
    n = len(s)
    if n <= order + 1:
        raise ValueError(f"detrend of order {order} needs more than {order + 1} points")
    wl = s.wavelengths
    t = (wl - wl.mean()) / (0.5 * (wl[-1] - wl[0]))
    A = np.vander(t, order + 1, increasing=True)
    coef, *_ = np.linalg.lstsq(A, s.intensities, rcond=None)
    return s.with_intensities(s.intensities - A @ coef)


def derivative(s: Spectrum, order: int = 1) -> Spectrum:
    """Central finite differences; second-order one-sided formulas at the ends."""
    if order not in (1, 2):
        raise ValueError("derivative order must be 1 or 2")
    if not s.is_uniform:
        raise NonUniformGrid(f"spectrum {s.id!r}: derivative needs a uniform grid")
    y = s.intensities
    h = s.step
    out = np.empty_like(y)
    if order == 1:
        out[1:-1] = (y[2:] - y[:-2]) / (2 * h)
        out[0] = (-3 * y[0] + 4 * y[1] - y[2]) / (2 * h)
        out[-1] = (3 * y[-1] - 4 * y[-2] + y[-3]) / (2 * h)
    else:
        out[1:-1] = (y[2:] - 2 * y[1:-1] + y[:-2]) / h**2
        out[0] = (2 * y[0] - 5 * y[1] + 4 * y[2] - y[3]) / h**2
        out[-1] = (2 * y[-1] - 5 * y[-2] + 4 * y[-3] - y[-4]) / h**2
    return s.with_intensities(out)


# -- chains --------------------------------------------------------------------------------


def apply_step(s: Spectrum, step: PreprocessStep) -> Spectrum:
    p = step.params
    if step.kind == "AsLS":
        return asls_baseline(s, p["lam"], p["p"], int(p["iters"]))[0]
    if step.kind == "SavitzkyGolay":
        return savitzky_golay(s, p["m"], p["degree"], p["deriv"])
    if step.kind == "MinMax":
        return minmax_normalize(s)
    if step.kind == "SNV":
        return snv(s)
    if step.kind == "Detrend":
        return detrend(s, p["order"])
    if step.kind == "FirstDerivative":
        return derivative(s, 1)
    if step.kind == "SecondDerivative":
        return derivative(s, 2)
    raise ValueError(f"{step.kind} operates on a batch, not a single spectrum")


def quality_report(target: Spectrum | SpectralDataset) -> QualityReport:
    """Finiteness, mean |value| over the outer 5 % margins, and std of second differences."""
    rows = target.X if isinstance(target, SpectralDataset) else target.intensities[None, :]
    if rows.shape[0] == 0:
        return QualityReport(True, 0.0, 0.0, ("empty input",))
    finite = bool(np.all(np.isfinite(rows)))
    n = rows.shape[1]
    k = max(1, int(round(0.05 * n)))
    margins = np.hstack([rows[:, :k], rows[:, n - k:]])
    flatness = float(np.mean(np.abs(margins)))
    noise = float(np.mean(np.std(np.diff(rows, 2, axis=1), axis=1, ddof=1)))
    spread = float(np.mean(np.std(rows, axis=1)))
    warns = []
    if not finite:
        warns.append("output contains non-finite values")
    if spread > 0 and flatness > spread:
        warns.append("spectrum margins sit far from zero; baseline may remain")
    if spread > 0 and noise > 0.5 * spread:
        warns.append("second-difference noise is large relative to signal spread")
    return QualityReport(finite, flatness, noise, tuple(warns))


def apply_chain(target: Spectrum | SpectralDataset, steps: Sequence[PreprocessStep]):
    """Apply ``steps`` left to right; returns ``(result, QualityReport)``.

    Failures are re-raised as :class:`ChainError` carrying the step index.
    """
    out = target
    for i, step in enumerate(steps):
        try:
            if step.kind == "MSC":
                if not isinstance(out, SpectralDataset):
                    raise ValueError("MSC needs a dataset, not a single spectrum")
                ref = step.params["reference"]
                out = msc(out, ref if isinstance(ref, str) else np.asarray(ref, float))
            elif isinstance(out, SpectralDataset):
                out = out.with_matrix([apply_step(s, step).intensities for s in out.spectra])
            else:
                out = apply_step(out, step)
        except Exception as exc:
            raise ChainError(i, step.kind, exc) from exc
        rows = out.X if isinstance(out, SpectralDataset) else out.intensities
        if not np.all(np.isfinite(rows)):
            raise ChainError(i, step.kind, ArithmeticError("non-finite output"))
    return out, quality_report(out)
