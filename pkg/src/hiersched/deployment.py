"""Application deployment protocol.

An application announces its class label, its contract, and optionally its
own scheduler. Admission first hunts for an already-loaded compatible
service; only when none fits is the supplied scheduler loaded. A rejected
deployment rolls the tree back to a state indistinguishable from before.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .contracts import Contract, format_contract, satisfies, utilization
from .hierarchy import Hierarchy, HierarchyError, SchedulerSpec


class Outcome(Enum):
    ATTACHED_EXISTING = "ATTACHED_EXISTING"
    LOADED_NEW = "LOADED_NEW"
    DEGRADED = "DEGRADED"
    REJECTED = "REJECTED"


class RejectReason(Enum):
    NO_SERVICE_NO_SCHEDULER = "NO_SERVICE_NO_SCHEDULER"
    INFEASIBLE = "INFEASIBLE"
    INVALID_REQUEST = "INVALID_REQUEST"


class DeploymentError(Exception):
    pass


@dataclass(frozen=True)
class DeploymentRequest:
    app_id: str
    app_class: str
    request: Contract
    scheduler: SchedulerSpec | None = None
    target_parent: int | None = None  # defaults to the root


@dataclass(frozen=True)
class DeploymentDecision:
    outcome: Outcome
    node_id: int | None = None
    awarded: Contract | None = None
    reason: RejectReason | None = None
    detail: str = ""

    def record(self) -> str:
        """One-line serialization for report files."""
        parts = [f"outcome={self.outcome.value}"]
        if self.node_id is not None:
            parts.append(f"node={self.node_id}")
        if self.awarded is not None:
            parts.append(f"awarded={format_contract(self.awarded)}")
        if self.reason is not None:
            parts.append(f"reason={self.reason.value}")
        if self.detail:
            parts.append(f"detail={self.detail!r}")
        return " ".join(parts)


def find_compatible_service(h: Hierarchy, req: DeploymentRequest):
    """First loaded leaf that can host the request, or None.

    A candidate must provide the requested class, have spare capacity for
    the request's utilization, and hold a grant that satisfies the request.
    The app_class label is a preference, not a filter: a candidate already
    tagged with the same label beats earlier untagged ones.
    """
    candidates = []
    for node in h.leaves():
        if req.request.service not in node.spec.provides:
            continue
        if h.spare_capacity(node.node_id) < utilization(req.request):
            continue
        if not satisfies(node.granted, req.request):
            continue
        candidates.append(node)
    if not candidates:
        return None
    if req.app_class:
        for node in candidates:
            if req.app_class in node.tags:
                return node.node_id
    return candidates[0].node_id


def deploy(h: Hierarchy, req: DeploymentRequest) -> DeploymentDecision:
    """Admit one application, preferring reuse of loaded schedulers.

    Search, then load, then reject: exactly one of ATTACHED_EXISTING,
    LOADED_NEW, DEGRADED (admitted on a shrunk grant), or REJECTED comes
    back, and REJECTED leaves the tree canonically identical to before.
    """
    invalid = _validate(h, req)
    if invalid is not None:
        return DeploymentDecision(
            Outcome.REJECTED, reason=RejectReason.INVALID_REQUEST, detail=invalid
        )

    nid = find_compatible_service(h, req)
    if nid is not None:
        return _attach(h, req, nid, loaded=False)

    if req.scheduler is None:
        return DeploymentDecision(
            Outcome.REJECTED,
            reason=RejectReason.NO_SERVICE_NO_SCHEDULER,
            detail="no compatible service and no scheduler supplied",
        )

    parent = req.target_parent if req.target_parent is not None else Hierarchy.ROOT_ID
    snap = h.snapshot()
    try:
        new_id = h.attach_scheduler(parent, req.scheduler)
    except HierarchyError as e:
        return DeploymentDecision(
            Outcome.REJECTED, reason=RejectReason.INVALID_REQUEST, detail=str(e)
        )
    h.node(new_id).loaded_for = req.app_id
    decision = _attach(h, req, new_id, loaded=True)
    if decision.outcome is Outcome.REJECTED:
        h.restore(snap)
    return decision


def _attach(h, req, node_id, loaded):
    snap = h.snapshot()
    h.attach_application(node_id, req.app_id, req.request)
    result = h.compose()
    if not result.feasible:
        h.restore(snap)
        return DeploymentDecision(
            Outcome.REJECTED,
            reason=RejectReason.INFEASIBLE,
            detail=f"rejected at {result.rejected.holder}: {result.rejected.reason}",
        )
    if req.app_class:
        h.node(node_id).tags.add(req.app_class)
    slot = h.app_slot(req.app_id)
    if slot.degraded:
        return DeploymentDecision(
            Outcome.DEGRADED, node_id=node_id, awarded=slot.awarded
        )
    outcome = Outcome.LOADED_NEW if loaded else Outcome.ATTACHED_EXISTING
    return DeploymentDecision(outcome, node_id=node_id, awarded=slot.awarded)


def _validate(h, req) -> str | None:
    if not req.app_id:
        return "empty app_id"
    if h.app_node(req.app_id) is not None:
        return f"app {req.app_id!r} already deployed"
    if req.scheduler is not None and req.request.service not in req.scheduler.provides:
        return (
            f"scheduler {req.scheduler.name!r} does not provide "
            f"{req.request.service.value}"
        )
    if req.target_parent is not None:
        try:
            parent = h.node(req.target_parent)
        except HierarchyError:
            return f"unknown target parent {req.target_parent}"
        if parent.is_leaf():
            return f"target parent {req.target_parent} is not VIRTUAL"
    return None


def undeploy(h: Hierarchy, app_id: str):
    """Remove an application; unload its scheduler if it loaded one and is
    now idle; recompose so squeezed grants recover."""
    node_id = h.app_node(app_id)
    if node_id is None:
        raise DeploymentError(f"no such app {app_id!r}")
    h.remove_application(app_id)
    node = h.node(node_id)
    if node.loaded_for == app_id and not node.apps:
        h.detach(node_id)
    result = h.compose()
    assert result.feasible, "removing demand cannot break feasibility"
