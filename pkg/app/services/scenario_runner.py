# app/services/scenario_runner.py - Scenario ingestion, pipeline stages and run artifacts

import json
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from app.core.config import Settings, settings as default_settings
from app.core.exceptions import Degenerate, DomainError, GeometryError, LeftTube, ScenarioError
from app.models.catalog import ACTIONS, build_isometry, build_manifold, build_submanifold
from app.models.checks import BoundCheck, CheckStatus, worst_status
from app.models.family import WeightedFamily
from app.models.manifold import AlmostKaehlerModel
from app.models.submanifold import ParamSubmanifold
from app.schemas.report import (
    AveragingRecord,
    CheckRecord,
    CheckSummary,
    ErrorRecord,
    FlowRecord,
    GentleRecord,
    RunReport,
    VerifierRecord,
)
from app.schemas.scenario import CatalogEntry, CheckSpec, Scenario
from app.services import constants_service
from app.services.averaging_service import AveragingReport, AveragingService
from app.services.bound_verifier import BoundVerifier, VerifierReport
from app.services.geometry_kernel import GeometryKernel
from app.services.moser_service import FlowReport, MoserService, PrimitiveData
from app.services.normal_slice_service import NormalSliceService
from app.services.submanifold_service import SubmanifoldService

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_ABORT = 3

CSV_FLOAT_FORMAT = "%.17g"


# ---------------------------------------------------------------------------
# Scenario loading
# ---------------------------------------------------------------------------


def parse_override(text: str) -> Tuple[str, Any]:
    """'a.b.0.c=value' -> ('a.b.0.c', decoded value); values that are not JSON stay strings."""
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise ScenarioError(f"override '{text}' is not of the form key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def apply_override(document: Dict[str, Any], dotted: str, value: Any) -> None:
    """Set document[dotted path] = value; missing mapping keys are created."""
    parts = dotted.split(".")
    node: Any = document
    for depth, part in enumerate(parts):
        last = depth == len(parts) - 1
        if isinstance(node, list):
            try:
                index = int(part)
                if last:
                    node[index] = value
                    return
                node = node[index]
            except (ValueError, IndexError):
                raise ScenarioError(f"override path '{dotted}': '{part}' is not a valid list index")
        elif isinstance(node, dict):
            if last:
                node[part] = value
                return
            node = node.setdefault(part, {})
        else:
            raise ScenarioError(f"override path '{dotted}' descends into a scalar at '{part}'")


def load_scenario(path: Union[str, Path], overrides: Sequence[str] = ()) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ScenarioError(f"cannot read scenario {path}: {e}")
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}")
    if not isinstance(document, dict):
        raise ScenarioError(f"{path}: top level must be a JSON object")
    for override in overrides:
        apply_override(document, *parse_override(override))
    try:
        return Scenario.model_validate(document)
    except ValidationError as e:
        raise ScenarioError(f"{path}: {e}")


# ---------------------------------------------------------------------------
# Report conversion
# ---------------------------------------------------------------------------


def check_records(checks: Sequence[BoundCheck]) -> List[CheckRecord]:
    return [CheckRecord(**check.as_dict()) for check in checks]


def verifier_record(report: VerifierReport) -> VerifierRecord:
    return VerifierRecord(
        name=report.name,
        trials=report.trials,
        rejections=report.rejections,
        status=report.status.value,
        worst_margin=report.worst_margin,
        inconclusive=report.inconclusive,
        failures=check_records(report.failures),
        summary={name: CheckSummary(**entry) for name, entry in report.summary().items()},
        values={key: float(value) for key, value in report.values.items()},
        notes=list(report.notes),
    )


def averaging_record(report: AveragingReport, reference_deviation: Optional[float] = None) -> AveragingRecord:
    return AveragingRecord(
        reference_index=report.reference_index,
        reference_label=report.reference_label,
        epsilon_measured=report.epsilon_measured,
        d1_to_average=report.d1_to_average,
        d0_to_average=report.d0_to_average,
        max_iterations=max(report.iterations),
        residual_sup=report.residual_sup,
        tolerance=report.tolerance,
        reference_deviation=reference_deviation,
        checks=check_records(report.bound_checks),
        notes=list(report.notes),
    )


def flow_record(report: FlowReport, primitive: PrimitiveData, alpha_sup: Optional[float]) -> FlowRecord:
    return FlowRecord(
        max_displacement=report.max_displacement,
        tube_limit=report.tube_limit,
        isotropy_defect=report.isotropy_defect,
        d0_to_members=report.d0_to_members,
        steps_used=report.steps_used,
        step_halvings=report.step_halvings,
        containment_checked=report.containment_checked,
        containment_overridden=report.containment_overridden,
        nondegeneracy_min=report.nondegeneracy_min,
        alpha_sup=alpha_sup,
        beta_sup=dict(primitive.beta_sup),
        checks=check_records(report.bound_checks),
        notes=list(report.notes),
    )


def point_cloud(sub: ParamSubmanifold) -> pd.DataFrame:
    """Grid parameters and chart coordinates, one row per node."""
    columns = {f"s{a}": sub.grid_parameters[:, a] for a in range(sub.dim)}
    columns.update({f"x{k}": sub.grid_points[:, k] for k in range(sub.ambient_dim)})
    return pd.DataFrame(columns)


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------


@dataclass
class RunOutcome:
    exit_code: int
    report: RunReport
    output_dir: Path
    average: Optional[ParamSubmanifold] = None  # N
    isotropic: Optional[ParamSubmanifold] = None  # L
    verifiers: List[VerifierReport] = field(default_factory=list)


class ScenarioRunner:
    """Runs the stages of one scenario in order and writes its artifacts"""

    EXACTNESS_TOLERANCE = 1e-5
    EXACTNESS_RADIUS = 0.01

    def __init__(
        self,
        scenario: Scenario,
        base_settings: Optional[Settings] = None,
        output: Optional[Union[str, Path]] = None,
        threads: Optional[int] = None,
        seed: Optional[int] = None,
    ):
        self.scenario = scenario
        update = dict(scenario.solver)
        if threads is not None:
            update["threads"] = threads
        if seed is not None:
            update["verifier_seed"] = seed
        self.settings = (base_settings or default_settings).model_copy(update=update)
        base = Path(self.settings.output_dir) / scenario.name
        self.output_dir = Path(output) if output is not None else Path(scenario.output) if scenario.output else base
        self.timings: Dict[str, float] = {}

    # ------------------------------------------------------------------
    # Building blocks
    # ------------------------------------------------------------------

    @staticmethod
    def _catalog(builder, entry: CatalogEntry, what: str):
        try:
            return builder(entry.id, entry.params)
        except KeyError as e:
            raise ScenarioError(f"unknown {what}: {e}")
        except (TypeError, ValueError) as e:
            raise ScenarioError(f"bad parameters for {what} '{entry.id}': {e}")

    def build(self) -> Tuple[AlmostKaehlerModel, WeightedFamily]:
        model = self._catalog(build_manifold, self.scenario.manifold, "manifold")
        spec = self.scenario.family
        try:
            if spec.members is not None:
                pairs = []
                for k, member in enumerate(spec.members):
                    sub = self._catalog(build_submanifold, member.submanifold, "submanifold")
                    if not sub.label:
                        sub = sub.transformed(lambda p: p, label=f"member_{k}")
                    pairs.append((member.weight, sub))
                family = WeightedFamily.from_pairs(pairs)
            else:
                base = self._catalog(build_submanifold, spec.group.base, "submanifold")
                elements = [
                    (f"{entry.id}_{k}", self._catalog(build_isometry, entry, "isometry"))
                    for k, entry in enumerate(spec.group.elements)
                ]
                family = WeightedFamily.from_group(base, elements)
        except ValueError as e:
            raise ScenarioError(f"invalid family: {e}")
        for member in family.members:
            if member.submanifold.ambient_dim != model.dim:
                raise ScenarioError(
                    f"member {member.label} lives in dimension {member.submanifold.ambient_dim}, "
                    f"manifold {model.name} has dimension {model.dim}"
                )
        return model, family

    @contextmanager
    def _stage(self, name: str) -> Iterator[None]:
        logger.info(f"[{self.scenario.name}] stage {name}")
        start = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = time.perf_counter() - start

    # ------------------------------------------------------------------
    # Pipeline
    # ------------------------------------------------------------------

    def run(self) -> RunOutcome:
        report = RunReport(scenario=self.scenario.name, status="PASS", exit_code=EXIT_OK)
        outcome = RunOutcome(exit_code=EXIT_OK, report=report, output_dir=self.output_dir)
        try:
            self._pipeline(outcome)
        except ScenarioError as e:
            logger.error(f"scenario error: {e}")
            self._abort(outcome, EXIT_CONFIG, ErrorRecord(kind=type(e).__name__, message=str(e)))
        except (Degenerate, LeftTube) as e:
            logger.error(f"numeric abort: {e}")
            constant = getattr(e, "constant", None) or "omega_t nondegenerate"
            self._abort(outcome, EXIT_ABORT, ErrorRecord(kind=type(e).__name__, message=str(e), constant=constant))
        except GeometryError as e:
            logger.error(f"numeric abort: {e}")
            self._abort(outcome, EXIT_ABORT, ErrorRecord(kind=type(e).__name__, message=str(e)))
        report.timings = dict(self.timings)
        self._write_report(outcome)
        return outcome

    def _abort(self, outcome: RunOutcome, code: int, error: ErrorRecord) -> None:
        outcome.exit_code = code
        outcome.report.exit_code = code
        outcome.report.status = "FAIL"
        outcome.report.error = error

    def _pipeline(self, outcome: RunOutcome) -> None:
        report = outcome.report
        model, family = self.build()
        kernel = GeometryKernel(model, self.settings)
        submanifolds = SubmanifoldService(kernel)
        averaging = AveragingService(submanifolds)
        slices = NormalSliceService(submanifolds)
        moser = MoserService(slices)
        verifier = BoundVerifier(slices, moser)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        for k, member in enumerate(family.members):
            self._write_cloud(member.submanifold, f"members_{k}.csv")

        with self._stage("measure_epsilon"):
            epsilon = averaging.measure_epsilon(family)
        report.epsilon_measured = epsilon
        if epsilon > 0 and constants_service.L_eps(epsilon) > 0:
            try:
                report.constants = constants_service.constants(epsilon).as_dict()
            except DomainError as e:
                logger.warning(f"constants table undefined at eps = {epsilon:.3e}: {e}")

        with self._stage("gentle"):
            gentle = {}
            for member in family.members:
                result = submanifolds.gentle_check(member.submanifold)
                gentle[member.label] = result
                if not result.passed:
                    logger.warning(f"{member.label} failed the gentle check")
                report.gentle.append(
                    GentleRecord(
                        label=member.label,
                        normal_injectivity_margin=float(result.normal_injectivity_margin),
                        curvature_sup_in_tube=float(result.curvature_sup_in_tube),
                        injectivity_proxy=float(result.injectivity_proxy),
                        passed=bool(result.passed),
                        truncated_directions=int(result.truncated_directions),
                        caveat=result.caveat,
                    )
                )

        with self._stage("weinstein_average"):
            N, averaging_report = averaging.weinstein_average(family, epsilon=epsilon)
            deviation = None
            if self.scenario.reference_cross_check is not None:
                deviation = averaging.reference_cross_check(family, N, self.scenario.reference_cross_check)
        outcome.average = N
        report.averaging = averaging_record(averaging_report, deviation)
        self._write_cloud(N, "N.csv")
        for member in family.members:
            report.isotropy_defects[member.label] = submanifolds.isotropy_defect(member.submanifold)
        report.isotropy_defects["N"] = submanifolds.isotropy_defect(N)
        checks: List[BoundCheck] = list(averaging_report.bound_checks)

        primitive = L = None
        if self.scenario.isotropic:
            with self._stage("build_primitive"):
                primitive = moser.build_primitive(family, N)
            with self._stage("moser_flow"):
                L, flow_report = moser.moser_flow(family, N, primitive, epsilon=epsilon)
                alpha_sup = primitive.alpha_sup(N.grid_points)
            outcome.isotropic = L
            report.flow = flow_record(flow_report, primitive, alpha_sup)
            report.isotropy_defects["L"] = flow_report.isotropy_defect
            checks.extend(flow_report.bound_checks)
            self._write_cloud(L, "L.csv")

        for spec in self.scenario.checks:
            with self._stage(spec.name):
                result = self._verify(spec, verifier, family, N, L, primitive, epsilon, gentle)
            outcome.verifiers.append(result)
            report.verifiers.append(verifier_record(result))
            checks.extend(result.checks)

        status = worst_status(checks)
        report.status = status.value
        if status == CheckStatus.FAIL:
            outcome.exit_code = report.exit_code = EXIT_FAIL

    # ------------------------------------------------------------------
    # Verifier dispatch
    # ------------------------------------------------------------------

    def _target(
        self, selector: Any, family: WeightedFamily, N: ParamSubmanifold, L: Optional[ParamSubmanifold]
    ) -> ParamSubmanifold:
        """Member index, "N", "L" or an inline submanifold catalog entry."""
        if isinstance(selector, bool):
            raise ScenarioError(f"invalid target {selector!r}")
        if isinstance(selector, int):
            if not 0 <= selector < len(family):
                raise ScenarioError(f"target member {selector} out of range")
            return family.members[selector].submanifold
        if selector == "N":
            return N
        if selector == "L":
            if L is None:
                raise ScenarioError("target 'L' needs the isotropic stage")
            return L
        if isinstance(selector, dict):
            try:
                entry = CatalogEntry.model_validate(selector)
            except ValidationError as e:
                raise ScenarioError(f"invalid inline target: {e}")
            return self._catalog(build_submanifold, entry, "submanifold")
        raise ScenarioError(f"invalid target {selector!r}")

    def _verify(
        self,
        spec: CheckSpec,
        verifier: BoundVerifier,
        family: WeightedFamily,
        N: ParamSubmanifold,
        L: Optional[ParamSubmanifold],
        primitive: Optional[PrimitiveData],
        epsilon: float,
        gentle: Dict[str, Any],
    ) -> VerifierReport:
        params = dict(spec.params)
        if spec.name == "tube_shape_operator":
            return verifier.verify_tube_shape_operator(
                self._target(params.get("target", 0), family, N, L), float(params.get("t", 0.1)), spec.trials
            )
        if spec.name == "hessian_cross":
            return verifier.verify_hessian_cross(
                self._target(params.get("target", 0), family, N, L), float(params.get("t", 0.1)), spec.trials
            )
        if spec.name == "triangle_bound":
            return verifier.verify_triangle_bound(spec.trials, int(params.get("subspace_dim", 1)))
        if spec.name == "pushforward_bounds":
            member = family.members[self._member_index(params, family)]
            return verifier.verify_pushforward_bounds(
                member.submanifold, N, epsilon, spec.trials, gentle=gentle.get(member.label)
            )
        if spec.name == "curve_growth":
            member = family.members[self._member_index(params, family)]
            return verifier.curve_growth_suite(
                member.submanifold, N, epsilon, pairs=spec.trials, samples=int(params.get("samples", 33))
            )
        if primitive is None:
            raise ScenarioError(f"check '{spec.name}' needs the isotropic stage")
        if spec.name == "form_bounds":
            return verifier.verify_form_bounds(family, N, primitive, epsilon, samples=spec.trials)
        if spec.name == "exactness":
            return self._exactness(verifier, N, primitive, spec.trials, params)
        return self._moment(verifier, family, N, L, spec, params)

    @staticmethod
    def _member_index(params: Dict[str, Any], family: WeightedFamily) -> int:
        index = params.get("member", 0)
        if not isinstance(index, int) or not 0 <= index < len(family):
            raise ScenarioError(f"member index {index!r} out of range")
        return index

    def _exactness(
        self, verifier: BoundVerifier, N: ParamSubmanifold, primitive: PrimitiveData, count: int, params: Dict[str, Any]
    ) -> VerifierReport:
        """d alpha against omega_avg - omega at random points of the tube around N."""
        radius = float(params.get("radius", self.EXACTNESS_RADIUS))
        tolerance = float(params.get("tolerance", self.EXACTNESS_TOLERANCE))
        rng = np.random.default_rng([self.settings.verifier_seed, 99])
        kernel = verifier.kernel
        points = []
        for _ in range(count):
            x = N.grid_points[int(rng.integers(N.node_count))]
            direction = rng.standard_normal(kernel.dim)
            points.append(kernel.exp_map(x, radius * rng.uniform() * direction / kernel.norm(x, direction)))
        result = VerifierReport(name="exactness", trials=count)
        result.checks.append(primitive.check_exactness(points, tolerance))
        result.values["radius"] = radius
        return result

    def _moment(
        self,
        verifier: BoundVerifier,
        family: WeightedFamily,
        N: ParamSubmanifold,
        L: Optional[ParamSubmanifold],
        spec: CheckSpec,
        params: Dict[str, Any],
    ) -> VerifierReport:
        action_id = params.get("action", "diagonal_circle")
        if action_id not in ACTIONS:
            raise ScenarioError(f"unknown action '{action_id}'")
        action = ACTIONS[action_id]()
        target = self._target(params.get("target", 0), family, N, L)
        average = self._target(params["average"], family, N, L) if "average" in params else L
        return verifier.moment_map_spread(
            action,
            target,
            epsilon=params.get("epsilon"),
            average=average,
            mu_guess=params.get("mu_guess"),
            group_samples=int(params.get("group_samples", 6)),
            directions=int(params.get("directions", 16)),
        )

    # ------------------------------------------------------------------
    # Artifacts
    # ------------------------------------------------------------------

    def _write_cloud(self, sub: ParamSubmanifold, filename: str) -> None:
        point_cloud(sub).to_csv(self.output_dir / filename, index=False, float_format=CSV_FLOAT_FORMAT)

    def _write_report(self, outcome: RunOutcome) -> None:
        try:
            self.output_dir.mkdir(parents=True, exist_ok=True)
            (self.output_dir / "report.json").write_text(outcome.report.model_dump_json(indent=2, by_alias=True))
        except OSError as e:
            logger.error(f"cannot write report to {self.output_dir}: {e}")
            if outcome.exit_code == EXIT_OK:
                outcome.exit_code = outcome.report.exit_code = EXIT_CONFIG
        logger.info(f"[{self.scenario.name}] exit {outcome.exit_code}, report in {self.output_dir}")


def run_scenario(
    path: Union[str, Path],
    overrides: Sequence[str] = (),
    output: Optional[Union[str, Path]] = None,
    threads: Optional[int] = None,
    seed: Optional[int] = None,
    base_settings: Optional[Settings] = None,
) -> RunOutcome:
    """Load, run and persist one scenario; configuration errors still leave a report when an output is known."""
    try:
        scenario = load_scenario(path, overrides)
    except ScenarioError as e:
        logger.error(f"scenario error: {e}")
        report = RunReport(
            scenario=Path(path).stem,
            status="FAIL",
            exit_code=EXIT_CONFIG,
            error=ErrorRecord(kind="ScenarioError", message=str(e)),
        )
        target = Path(output) if output is not None else Path((base_settings or default_settings).output_dir) / Path(path).stem
        outcome = RunOutcome(exit_code=EXIT_CONFIG, report=report, output_dir=target)
        if output is not None:
            target.mkdir(parents=True, exist_ok=True)
            (target / "report.json").write_text(report.model_dump_json(indent=2, by_alias=True))
        return outcome
    return ScenarioRunner(scenario, base_settings, output, threads, seed).run()
