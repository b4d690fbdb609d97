"""Audit report container shared by the audit routines."""

from dataclasses import dataclass, field
from typing import Any


@dataclass
class AuditReport:
    """Outcome of one sampled audit.

    ``value`` is the audited quantity (typically a maximum ratio), ``bound`` the
    threshold it is compared against, ``details`` free-form per-sample data and
    ``plan`` the sampling parameters needed to replay the audit.
    """

    name: str
    passed: bool
    value: float = 0.0
    bound: float = float("inf")
    details: dict = field(default_factory=dict)
    plan: dict = field(default_factory=dict)

    @property
    def pass_(self):
        return self.passed

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "value": self.value,
            "bound": self.bound,
            "details": self.details,
            "plan": self.plan,
        }
