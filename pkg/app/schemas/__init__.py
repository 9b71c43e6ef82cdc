# app/schemas/__init__.py
"""
Pydantic schemas for the scenario runner

This module contains the models used for:
- Scenario file validation
- Report serialization
"""

# Scenario schemas
from .scenario import (
    CatalogEntry,
    CheckName,
    CheckSpec,
    FamilySpec,
    GroupSpec,
    MemberSpec,
    Scenario,
)

# Report schemas
from .report import (
    AveragingRecord,
    CheckRecord,
    CheckSummary,
    ErrorRecord,
    FlowRecord,
    GentleRecord,
    RunReport,
    VerifierRecord,
)

__all__ = [
    # Scenario
    "CatalogEntry",
    "CheckName",
    "CheckSpec",
    "FamilySpec",
    "GroupSpec",
    "MemberSpec",
    "Scenario",
    # Report
    "AveragingRecord",
    "CheckRecord",
    "CheckSummary",
    "ErrorRecord",
    "FlowRecord",
    "GentleRecord",
    "RunReport",
    "VerifierRecord",
]
