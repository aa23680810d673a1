"""Scalar Gaussian message algebra in precision form.

Every quantity exchanged on a factor-graph edge is a univariate Gaussian
stored as ``(mean, precision)`` with ``precision = 1/variance``.  Precision 0
encodes the uninformative (infinite-variance) message; it is exactly
representable in this form and acts as the identity of the message product.
Means and linear coefficients are real floats or circularly-symmetric complex
scalars depending on the graph-wide field mode; precisions and variances are
non-negative reals in both modes.

Message update rules, for a linear factor ``obs = sum_k C_k v_k + u`` with
``u ~ N(0, noise_var)``:

* variable -> factor: precisions add, means combine precision-weighted::

      prec_out = sum_{k != excluded} prec_k
      mean_out = sum_{k != excluded} prec_k * mean_k / prec_out

* factor -> variable (target ``i``)::

      mean_out = (obs - sum_{k != i} C_k mean_k) / C_i
      var_out  = (noise_var + sum_{k != i} |C_k|^2 var_k) / |C_i|^2

  A degree-1 factor therefore emits ``(obs / C, noise_var / |C|^2)``; any
  uninformative non-target input makes the output uninformative.

* the marginal is the variable -> factor product with nothing excluded.

Everything here is a pure function on immutable values.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Hashable, Mapping, Sequence

__all__ = [
    "GaussianMessage",
    "FactorCoeffs",
    "UNINFORMATIVE",
    "variable_to_factor",
    "factor_to_variable",
    "marginal",
]


def _abs2(c):
    """|c|^2 without an intermediate square root; floats stay float."""
    if isinstance(c, complex):
        return c.real * c.real + c.imag * c.imag
    return c * c


@dataclass(frozen=True)
class GaussianMessage:
    """A scalar Gaussian belief ``N(mean, 1/precision)``.

    ``precision >= 0``; precision 0 is the uninformative message, whose mean
    is 0 by convention.  The mean must be finite whenever the message carries
    information.
    """

    mean: complex | float
    precision: float

    def __post_init__(self):
        if not (self.precision >= 0.0):  # also rejects NaN
            raise ValueError(f"precision must be >= 0, got {self.precision!r}")
        if self.precision > 0.0 and not cmath.isfinite(self.mean):
            raise ValueError("mean must be finite when precision > 0")

    @property
    def variance(self) -> float:
        return math.inf if self.precision == 0.0 else 1.0 / self.precision

    @property
    def uninformative(self) -> bool:
        return self.precision == 0.0


UNINFORMATIVE = GaussianMessage(0.0, 0.0)


@dataclass(frozen=True)
class FactorCoeffs:
    """Definition of one linear factor ``observation = sum coeffs[v]*v + noise``.

    Parameters
    ----------
    coeffs : mapping from variable id to its nonzero linear coefficient.
    observation : the factor's measured/known value. ``None`` marks a virtual
        factor that injects no information (its outgoing message is always
        uninformative); such factors exist so every variable has a well-defined
        initial input.
    noise_var : variance of the factor's own additive noise term, >= 0.
    """

    coeffs: Mapping[Hashable, complex | float]
    observation: complex | float | None = None
    noise_var: float = 0.0

    def __post_init__(self):
        if not self.coeffs:
            raise ValueError("a factor must touch at least one variable")
        for vid, c in self.coeffs.items():
            if c == 0:
                raise ValueError(f"zero coefficient stored for variable {vid!r}")
            if not cmath.isfinite(c):
                raise ValueError(f"non-finite coefficient for variable {vid!r}")
        if not (self.noise_var >= 0.0) or math.isinf(self.noise_var):
            raise ValueError(f"noise_var must be finite and >= 0, got {self.noise_var!r}")
        if self.observation is not None and not cmath.isfinite(self.observation):
            raise ValueError("observation must be finite when present")

    @property
    def degree(self) -> int:
        return len(self.coeffs)


def variable_to_factor(incoming: Sequence[GaussianMessage], excluded: int) -> GaussianMessage:
    """Product of all ``incoming`` messages except the one at index ``excluded``.

    Precisions add; the mean is the precision-weighted average.  Returns the
    uninformative message when nothing retained carries information, so an
    all-uninformative input set yields ``(0, 0)`` rather than a 0/0.
    """
    prec = 0.0
    weighted = 0.0
    for k, msg in enumerate(incoming):
        if k == excluded:
            continue
        prec += msg.precision
        weighted += msg.precision * msg.mean
    if prec == 0.0:
        return UNINFORMATIVE
    return GaussianMessage(weighted / prec, prec)


def marginal(incoming: Sequence[GaussianMessage]) -> GaussianMessage:
    """Belief at a variable: the product of all incoming messages."""
    return variable_to_factor(incoming, excluded=-1)


def factor_to_variable(
    factor: FactorCoeffs,
    incoming: Mapping[Hashable, GaussianMessage],
    target: Hashable,
) -> GaussianMessage:
    """Message from ``factor`` to its incident variable ``target``.

    ``incoming`` maps each *non-target* incident variable to its current
    variable->factor message.  The factor's observation is treated as a noisy
    linear combination of its variables: conditioning on the incoming beliefs
    of the others pins down the target with

        mean = (obs - sum_others C_k m_k) / C_target
        var  = (noise_var + sum_others |C_k|^2 s_k^2) / |C_target|^2

    If any non-target input is uninformative the factor cannot constrain the
    target and the uninformative message is returned; likewise for virtual
    factors with no observation.
    """
    try:
        c_target = factor.coeffs[target]
    except KeyError:
        raise KeyError(f"variable {target!r} is not incident to this factor") from None
    if factor.observation is None:
        return UNINFORMATIVE
    residual = factor.observation
    spread = factor.noise_var
    for vid, c in factor.coeffs.items():
        if vid == target:
            continue
        try:
            msg = incoming[vid]
        except KeyError:
            raise KeyError(f"missing incoming message for variable {vid!r}") from None
        if msg.precision == 0.0:
            return UNINFORMATIVE
        residual -= c * msg.mean
        spread += _abs2(c) / msg.precision
    gain = _abs2(c_target)
    precision = math.inf if spread == 0.0 else gain / spread
    return GaussianMessage(residual / c_target, precision)
