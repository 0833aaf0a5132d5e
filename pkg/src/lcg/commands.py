"""Experiment commands.

Each command reads and writes fixed artifact names inside the run's
output directory and records everything it writes in the manifest.
"""

import dataclasses
import logging
from pathlib import Path
from typing import Any
from typing import Dict
from typing import List
from typing import Optional
from typing import Sequence
from typing import Tuple

import numpy as np

from .core.artifacts import load_classifier
from .core.artifacts import load_denoiser
from .core.artifacts import read_dataset
from .core.artifacts import read_json
from .core.artifacts import read_latents
from .core.artifacts import save_classifier
from .core.artifacts import save_denoiser
from .core.artifacts import sidecar_path
from .core.artifacts import write_dataset
from .core.artifacts import write_disentanglement
from .core.artifacts import write_json
from .core.artifacts import write_latents
from .core.artifacts import write_loss_trace
from .core.artifacts import write_matrix
from .core.artifacts import write_report
from .core.classifiers import LatentClassifier
from .core.classifiers import pairwise_correlation
from .core.classifiers import train_classifier
from .core.diffusion import Denoiser
from .core.diffusion import NoiseSchedule
from .core.diffusion import elbo_conditional
from .core.diffusion import elbo_unconditional
from .core.diffusion import make_schedule
from .core.diffusion import sample
from .core.diffusion import train_denoiser
from .core.evaluation import EditSettings
from .core.evaluation import EvalReport
from .core.evaluation import disentanglement_report
from .core.evaluation import evaluate_samples
from .core.evaluation import latent_fid
from .core.evaluation import path_comparison
from .core.evaluation import random_condition_acc
from .core.evaluation import reference_moments
from .core.exceptions import ClassifierKindError
from .core.exceptions import ConfigurationError
from .core.exceptions import DataError
from .core.exceptions import GuidanceSpecError
from .core.exceptions import NumericError
from .core.guidance import GuidanceSpec
from .core.guidance import SourceTerm
from .core.guidance import guided_sample
from .core.guidance import linear_solution
from .core.guidance import manipulate
from .core.guidance import sequential_edit
from .core.guidance import spec_from_mapping
from .core.guidance import spec_to_mapping
from .core.numkernel import make_rng
from .core.plotting import heatmap_svg
from .core.plotting import scatter_svg
from .core.types import ClassifierKind
from .core.types import TrainTarget
from .core.world import WorldSpec
from .core.world import sample_dataset
from .core.world import standard_world
from .runner import RunContext

logger = logging.getLogger(__name__)

DATASET = "dataset.csv"
DENOISER = "denoiser.json"
DENOISER_LOSS = "denoiser_loss.csv"
COMPOSE_SAMPLES = "compose_samples.csv"
ELBO_RESIDUAL_LIMIT = 1e-9

Classifiers = Dict[str, LatentClassifier]


def classifier_file(attribute: str) -> str:
    return f"classifier_{attribute}.json"


# ---------------------------------------------------------------------------
# Shared loading
# ---------------------------------------------------------------------------


def build_world(ctx: RunContext) -> WorldSpec:
    """World of the run: the dataset's sidecar when present, else the configured one."""
    side = sidecar_path(ctx.path(DATASET))
    if side.exists():
        return WorldSpec.from_dict(read_json(side, "Dataset sidecar")["world"])
    settings = ctx.config.world
    if settings.inline:
        return WorldSpec.from_dict(settings.inline)
    if not settings.preset:
        raise ConfigurationError("world needs a preset or an inline description")
    return standard_world(settings.preset)


def _schedule(ctx: RunContext) -> NoiseSchedule:
    sched = ctx.config.schedule
    return make_schedule(sched.T, sched.b_start, sched.b_end)


def _load_denoiser(ctx: RunContext) -> Tuple[Denoiser, NoiseSchedule]:
    net, s, _ = load_denoiser(ctx.require(DENOISER, "train diffusion"))
    return net, s


def _load_classifiers(ctx: RunContext, world: WorldSpec) -> Classifiers:
    """Every saved classifier for an attribute of the world."""
    found = {}
    for name in world.attribute_names:
        path = ctx.path(classifier_file(name))
        if path.exists():
            found[name], _ = load_classifier(path)
    logger.debug(f"Loaded classifiers for {sorted(found)}")
    return found


def _guidance_spec(ctx: RunContext, with_source: bool) -> GuidanceSpec:
    spec = spec_from_mapping(ctx.config.guidance)
    if not with_source:
        return dataclasses.replace(spec, source=None)
    if spec.source is None:
        raise GuidanceSpecError("Editing needs a 'source' block in the guidance section")
    return spec


def _all_linear(classifiers: Classifiers, names: Sequence[str]) -> bool:
    return all(classifiers[n].kind is ClassifierKind.LINEAR for n in names if n in classifiers)


def _write_report(ctx: RunContext, name: str, report: EvalReport) -> None:
    ctx.record(*write_report(ctx.path(name), report))


# ---------------------------------------------------------------------------
# genworld / train
# ---------------------------------------------------------------------------


def cmd_genworld(ctx: RunContext) -> Dict[str, Any]:
    """Sample the synthetic world and write the dataset with its sidecar."""
    settings = ctx.config.world
    if settings.inline:
        world = WorldSpec.from_dict(settings.inline)
    else:
        world = standard_world(settings.preset or "")
    data = sample_dataset(world, settings.n, ctx.rng("world"), seed=ctx.config.seed)
    ctx.record(*write_dataset(ctx.path(DATASET), data))
    summary = {"world": world.name, "n": len(data), "dim": world.dim}
    ctx.manifest.results["genworld"] = summary
    return summary


def _parse_train_target(target: str) -> Tuple[TrainTarget, Optional[str]]:
    if target in (TrainTarget.DIFFUSION.value, TrainTarget.CLASSIFIERS.value):
        return TrainTarget(target), None
    kind, _, attribute = target.partition(":")
    if kind == TrainTarget.CLASSIFIER.value and attribute:
        return TrainTarget.CLASSIFIER, attribute
    raise ConfigurationError(
        f"Unknown train target '{target}'. Use diffusion, classifiers or classifier:<attribute>"
    )


def _train_diffusion(ctx: RunContext) -> Dict[str, Any]:
    data = read_dataset(ctx.require(DATASET, "genworld"))
    settings = ctx.config.denoiser
    s = _schedule(ctx)
    rng = ctx.rng("train", "diffusion")
    net = Denoiser.create(data.dim, rng, hidden=settings.hidden, activation=settings.activation)
    result = train_denoiser(s, data, net, settings.steps, settings.batch, settings.lr, rng, settings.log_every)
    losses = result.losses
    decile = max(1, len(losses) // 10)
    summary = {
        "steps": settings.steps,
        "first_decile_loss": float(np.mean(losses[:decile])) if len(losses) else None,
        "last_decile_loss": float(np.mean(losses[-decile:])) if len(losses) else None,
    }
    meta = {"seed": ctx.config.seed, "batch": settings.batch, "lr": settings.lr, **summary}
    ctx.record(save_denoiser(ctx.path(DENOISER), result.net, s, meta))
    ctx.record(write_loss_trace(ctx.path(DENOISER_LOSS), result.losses, result.smoothed))
    ctx.manifest.results["diffusion"] = summary
    return summary


def _train_classifier(ctx: RunContext, attribute: str) -> Dict[str, Any]:
    data = read_dataset(ctx.require(DATASET, "genworld"))
    settings = ctx.config.classifiers
    classifier, report = train_classifier(
        settings.kind,
        data,
        attribute,
        settings.epochs,
        settings.lr,
        ctx.rng("train", f"classifier:{attribute}"),
        l2=settings.l2,
        hidden=settings.hidden,
        batch=settings.batch,
    )
    meta = {"seed": ctx.config.seed, **report}
    ctx.record(save_classifier(ctx.path(classifier_file(attribute)), classifier, meta))
    ctx.manifest.results.setdefault("classifiers", {})[attribute] = dict(report)
    return dict(report)


def cmd_train(ctx: RunContext, target: str) -> Dict[str, Any]:
    """Train the denoiser, one classifier, or every configured classifier.

    Raises:
        ConfigurationError: Unknown target
        DataError: No dataset in the output directory
    """
    kind, attribute = _parse_train_target(target)
    if kind is TrainTarget.DIFFUSION:
        return _train_diffusion(ctx)
    if kind is TrainTarget.CLASSIFIER:
        return {attribute: _train_classifier(ctx, attribute)}
    world = build_world(ctx)
    names = ctx.config.classifiers.attributes or world.attribute_names
    return {name: _train_classifier(ctx, name) for name in names}


# ---------------------------------------------------------------------------
# compose / edit
# ---------------------------------------------------------------------------


def cmd_compose(ctx: RunContext) -> Dict[str, Any]:
    """Guided generation under the configured spec, with its report."""
    world = build_world(ctx)
    net, s = _load_denoiser(ctx)
    classifiers = _load_classifiers(ctx, world)
    spec = _guidance_spec(ctx, with_source=False)
    sampling = ctx.config.sampling
    samples = guided_sample(spec, net, classifiers, s, sampling.n, sampling.sampler, ctx.rng("sample", "compose"), sampling.eta)
    metadata: Dict[str, Any] = {
        "n": sampling.n,
        "seed": ctx.config.seed,
        "sampler": sampling.sampler.value,
        "spec": spec_to_mapping(spec),
        "targets": spec.targets,
        "unconditional": spec.is_unconditional,
    }
    if spec.targets and sampling.n > world.dim:
        baseline = sample(s, net, sampling.n, sampling.sampler, ctx.rng("sample", "baseline"), eta=sampling.eta)
        mean, cov = reference_moments(world, spec.targets)
        metadata["unconditional_latent_fid"] = latent_fid(baseline, mean, cov)
    report = evaluate_samples(world, samples, spec.targets, metadata=metadata)
    ctx.record(write_latents(ctx.path(COMPOSE_SAMPLES), samples))
    _write_report(ctx, "compose_report.csv", report)
    ctx.manifest.results["compose"] = report.to_dict()
    logger.info(f"Composed {sampling.n} samples, ACC {report.acc}")
    return report.to_dict()


def _edit_sources(ctx: RunContext, world: WorldSpec) -> np.ndarray:
    raw_source = ctx.config.guidance.get("source") or {}
    if raw_source.get("latent") is not None:
        latent = np.atleast_2d(np.asarray(raw_source["latent"], dtype=np.float64))
        if latent.shape[1] != world.dim:
            raise DataError(f"Source latent has {latent.shape[1]} coordinates; world has {world.dim}")
        return latent
    data = read_dataset(ctx.require(DATASET, "genworld"))
    if raw_source.get("index") is not None:
        index = int(raw_source["index"])
        if not 0 <= index < len(data):
            raise DataError(f"Source index {index} outside dataset of {len(data)} points")
        return data.latents[index : index + 1]
    if len(data) == 0:
        raise DataError("Dataset is empty; nothing to edit")
    n = min(ctx.config.edit.n, len(data))
    rows = ctx.rng("sample", "sources").choice(len(data), size=n, replace=False)
    return data.latents[np.sort(rows)]


def _edit_chain(ctx: RunContext, spec: GuidanceSpec, sequential: bool) -> List[GuidanceSpec]:
    if not sequential:
        return [spec]
    source = ctx.config.guidance.get("source")
    steps = ctx.config.edit.sequence
    if not steps:
        if not spec.terms:
            raise GuidanceSpecError("Sequential editing needs at least one guidance term")
        return [dataclasses.replace(spec, terms=(term,)) for term in spec.terms]
    chain = [spec_from_mapping({"terms": terms, "source": source}) for terms in steps]
    if any(edit.source is None for edit in chain):
        raise GuidanceSpecError("Sequential edits need a source block")
    return chain


def _linear_chain(chain: Sequence[GuidanceSpec], sources: np.ndarray, classifiers: Classifiers) -> List[np.ndarray]:
    current, outputs = sources, []
    for edit in chain:
        source = SourceTerm(latent=current, gamma=edit.source.gamma, variance=edit.source.variance)
        current = linear_solution(edit.terms, source, classifiers)
        outputs.append(current)
    return outputs


def _union_targets(chain: Sequence[GuidanceSpec]) -> Dict[str, int]:
    targets: Dict[str, int] = {}
    for edit in chain:
        targets.update(edit.targets)
    return targets


def _emit_edit(
    ctx: RunContext,
    world: WorldSpec,
    sources: np.ndarray,
    outputs: List[np.ndarray],
    chain: Sequence[GuidanceSpec],
    mode: str,
    sequential: bool,
) -> Dict[str, Any]:
    prefix = "edit_linear" if mode == "linear" else "edit"
    if sequential:
        for i, step in enumerate(outputs):
            ctx.record(write_latents(ctx.path(f"{prefix}_step{i + 1}_latents.csv"), step))
    else:
        ctx.record(write_latents(ctx.path(f"{prefix}_latents.csv"), outputs[-1]))
    metadata = {
        "mode": mode,
        "sequential": sequential,
        "n": len(sources),
        "seed": ctx.config.seed,
        "edits": [spec_to_mapping(edit) for edit in chain],
    }
    report = evaluate_samples(world, outputs[-1], _union_targets(chain), sources, metadata)
    _write_report(ctx, f"{prefix}_report.csv", report)
    return report.to_dict()


def cmd_edit(ctx: RunContext, linear: bool = False, sequential: bool = False) -> Dict[str, Any]:
    """Edit source latents toward the configured targets.

    With linear=False the diffusion edit runs and, when every referenced
    classifier is linear, the closed-form edit of the same sources is
    reported beside it.
    """
    world = build_world(ctx)
    classifiers = _load_classifiers(ctx, world)
    spec = _guidance_spec(ctx, with_source=True)
    chain = _edit_chain(ctx, spec, sequential)
    sources = _edit_sources(ctx, world)
    reports: Dict[str, Any] = {}

    names = list(_union_targets(chain))
    if not linear:
        net, s = _load_denoiser(ctx)
        settings = ctx.config
        rng = ctx.rng("sample", "edit")
        t_start, sampler = settings.sampling.t_start, settings.edit.sampler
        if sequential:
            outputs = sequential_edit(chain, net, classifiers, s, sources, t_start, rng, sampler)
        else:
            outputs = [manipulate(chain[0], net, classifiers, s, sources, t_start, rng, sampler)]
        reports["diffusion"] = _emit_edit(ctx, world, sources, outputs, chain, "diffusion", sequential)
        if not _all_linear(classifiers, names):
            logger.warning("Skipping the paired linear edit: a referenced classifier is not linear")
            ctx.manifest.results["edit"] = reports
            return reports

    for name in names:
        if name in classifiers and classifiers[name].kind is not ClassifierKind.LINEAR:
            raise ClassifierKindError(name, "linear arithmetic")
    outputs = _linear_chain(chain, sources, classifiers)
    reports["linear"] = _emit_edit(ctx, world, sources, outputs, chain, "linear", sequential)
    ctx.manifest.results["edit"] = reports
    return reports


# ---------------------------------------------------------------------------
# eval / plot / elbo-check
# ---------------------------------------------------------------------------


def _eval_settings(ctx: RunContext) -> EditSettings:
    cfg = ctx.config
    return EditSettings(
        alpha=cfg.eval.alpha,
        gamma=cfg.eval.gamma,
        t_start=cfg.sampling.t_start,
        sampler=cfg.edit.sampler,
        linear=cfg.eval.linear,
    )


def cmd_eval(ctx: RunContext, samples_path: Optional[Path] = None) -> Dict[str, Any]:
    """Evaluate a samples file and run the classifier and disentanglement analyses.

    Raises:
        DataError: Missing or empty samples file
    """
    world = build_world(ctx)
    classifiers = _load_classifiers(ctx, world)
    source = samples_path if samples_path is not None else ctx.require(COMPOSE_SAMPLES, "compose")
    samples = read_latents(source)
    spec = _guidance_spec(ctx, with_source=False)
    report = evaluate_samples(world, samples, spec.targets, metadata={"samples": str(source), "n": len(samples)})
    _write_report(ctx, "eval_report.csv", report)
    results: Dict[str, Any] = {"report": report.to_dict()}

    names = [n for n in world.attribute_names if n in classifiers]
    if names and _all_linear(classifiers, names):
        corr = pairwise_correlation([classifiers[n] for n in names])
        ctx.record(write_matrix(ctx.path("correlation.csv"), names, corr))
        results["correlation"] = corr.tolist()

    settings = _eval_settings(ctx)
    order = ctx.config.eval.edit_order or world.attribute_names
    net, s = (None, None) if settings.linear else _load_denoiser(ctx)
    if len(world.attributes) >= 2 and all(n in classifiers for n in order):
        dis = disentanglement_report(
            world, classifiers, order, ctx.config.eval.n, ctx.rng("eval", "disentanglement"), settings, net, s
        )
        ctx.record(write_disentanglement(ctx.path("disentanglement.csv"), dis))
        results["disentanglement"] = {"targeted_acc": dis.targeted_acc, "targeted_gain": dis.targeted_gain}
    else:
        logger.info("Skipping disentanglement: needs two attributes and a classifier for each edit")

    if ctx.config.eval.random_condition or ctx.config.eval.path_comparison:
        net, s = _load_denoiser(ctx)
    if ctx.config.eval.random_condition:
        results["random_condition_acc"] = random_condition_acc(
            world, net, classifiers, s, ctx.config.eval.n, ctx.rng("eval", "random-condition"),
            scale=settings.alpha, sampler=ctx.config.sampling.sampler,
        )
    if ctx.config.eval.path_comparison and spec.targets:
        data = read_dataset(ctx.require(DATASET, "genworld"))
        n = min(ctx.config.edit.n, len(data))
        paths = path_comparison(
            world, net, classifiers, s, data.latents[:n], spec.targets, ctx.rng("eval", "paths"), settings
        )
        _write_report(ctx, "path_compositional.csv", paths.compositional)
        _write_report(ctx, "path_sequential.csv", paths.sequential)
        results["path_comparison"] = {
            "compositional": paths.compositional.to_dict(),
            "sequential": paths.sequential.to_dict(),
        }
    ctx.manifest.results["eval"] = {k: v for k, v in results.items() if k != "report"}
    return results


def cmd_plot(ctx: RunContext, samples_path: Optional[Path] = None) -> Dict[str, Any]:
    """SVG scatter plots of the dataset and samples, and the correlation heatmap.

    Raises:
        DataError: Nothing to plot
    """
    world = build_world(ctx)
    drawn: Dict[str, Any] = {}
    if samples_path is not None:
        targets = {"samples.svg": samples_path}
    else:
        targets = {
            "dataset.svg": ctx.path(DATASET),
            "samples.svg": ctx.path(COMPOSE_SAMPLES),
        }
    for name, source in targets.items():
        if not Path(source).exists():
            continue
        if name == "dataset.svg":
            latents = read_dataset(source).latents
        else:
            latents = read_latents(source)
        drawn[name] = scatter_svg(ctx.path(name), world, latents)
        ctx.record(ctx.path(name))

    classifiers = _load_classifiers(ctx, world)
    names = [n for n in world.attribute_names if n in classifiers]
    if names and _all_linear(classifiers, names):
        heatmap_svg(ctx.path("correlation.svg"), names, pairwise_correlation([classifiers[n] for n in names]))
        ctx.record(ctx.path("correlation.svg"))
        drawn["correlation.svg"] = len(names)
    if not drawn:
        raise DataError(f"Nothing to plot in {ctx.out}")
    return drawn


def cmd_elbo_check(ctx: RunContext) -> float:
    """Largest |(conditional - unconditional) - classifier term| over random latents.

    Uses the trained denoiser and classifiers when present, otherwise a
    freshly initialized denoiser and the world's exact half-space
    classifiers; the decomposition holds for any network.

    Raises:
        NumericError: Residual above 1e-9
    """
    world = build_world(ctx)
    if ctx.path(DENOISER).exists():
        net, s = _load_denoiser(ctx)
    else:
        s = _schedule(ctx)
        net = Denoiser.create(world.dim, ctx.rng("eval", "elbo-net"), hidden=ctx.config.denoiser.hidden)
    classifiers: Classifiers = _load_classifiers(ctx, world)
    for attr in world.attributes:
        classifiers.setdefault(attr.name, LatentClassifier.linear(attr.name, attr.normal, attr.offset))
    targets = _guidance_spec(ctx, with_source=False).targets or {n: 1 for n in world.attribute_names}

    settings = ctx.config.elbo_check
    points = sample_dataset(world, settings.samples, ctx.rng("eval", "elbo-points")).latents
    residuals = []
    for i, z0 in enumerate(points):
        stream = f"eval:elbo:{i}"
        plain = elbo_unconditional(s, net, z0, make_rng(ctx.config.seed, stream), settings.mc)
        conditioned = elbo_conditional(s, net, classifiers, targets, z0, make_rng(ctx.config.seed, stream), settings.mc)
        residuals.append(abs((conditioned.total - plain.total) - conditioned.classifier_term))
    worst = float(max(residuals)) if residuals else 0.0
    ctx.manifest.stage_seeds["eval:elbo"] = {"seed": ctx.config.seed, "streams": len(residuals)}
    ctx.record(write_json(ctx.path("elbo_check.json"), {"residuals": residuals, "max_residual": worst, "targets": targets}))
    ctx.manifest.results["elbo_check"] = {"max_residual": worst}
    if worst >= ELBO_RESIDUAL_LIMIT:
        raise NumericError("elbo-check", f"decomposition residual {worst:.3e} exceeds {ELBO_RESIDUAL_LIMIT:g}")
    return worst
