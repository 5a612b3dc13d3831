"""Shared builders for scheduler specs used across test modules."""

from hiersched.contracts import Contract, ServiceClass
from hiersched.hierarchy import PolicyKind, SchedulerSpec


def edf_spec(name, request, quantum=10):
    return SchedulerSpec(
        name=name,
        policy=PolicyKind.EDF_RESERVATION,
        provides=frozenset({ServiceClass.RESBH, ServiceClass.RESBS}),
        parent_request=request,
        quantum=quantum,
    )


def stride_spec(name, request, quantum=10):
    return SchedulerSpec(
        name=name,
        policy=PolicyKind.STRIDE,
        provides=frozenset({ServiceClass.PS, ServiceClass.BE}),
        parent_request=request,
        quantum=quantum,
    )


def rr_spec(name, request, quantum=10):
    return SchedulerSpec(
        name=name,
        policy=PolicyKind.ROUND_ROBIN,
        provides=frozenset({ServiceClass.BE}),
        parent_request=request,
        quantum=quantum,
    )


def fp_spec(name, request, quantum=10):
    return SchedulerSpec(
        name=name,
        policy=PolicyKind.FIXED_PRIORITY,
        provides=frozenset({ServiceClass.RESBS, ServiceClass.BE}),
        parent_request=request,
        quantum=quantum,
    )


def virtual_spec(name, request, quantum=10):
    return SchedulerSpec(
        name=name,
        policy=PolicyKind.VIRTUAL,
        provides=frozenset(),
        parent_request=request,
        quantum=quantum,
    )
