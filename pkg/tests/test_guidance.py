"""组合引导测试."""

import numpy as np
import pytest
from conftest import ideal_classifiers
from conftest import zero_denoiser
from lcg.core.classifiers import LatentClassifier
from lcg.core.classifiers import train_classifier
from lcg.core.diffusion import Denoiser
from lcg.core.diffusion import sample
from lcg.core.diffusion import score_from_noise
from lcg.core.evaluation import latent_fid
from lcg.core.exceptions import ClassifierKindError
from lcg.core.exceptions import ClassifierNotFoundError
from lcg.core.exceptions import GuidanceSpecError
from lcg.core.guidance import GuidanceSpec
from lcg.core.guidance import GuidanceTerm
from lcg.core.guidance import ScaleSchedule
from lcg.core.guidance import SourceTerm
from lcg.core.guidance import compose_score
from lcg.core.guidance import fixed_point_flow
from lcg.core.guidance import fixed_point_trace
from lcg.core.guidance import guided_sample
from lcg.core.guidance import linear_solution
from lcg.core.guidance import manipulate
from lcg.core.guidance import sequential_edit
from lcg.core.guidance import spec_from_mapping
from lcg.core.guidance import spec_to_mapping
from lcg.core.numkernel import init_mlp
from lcg.core.numkernel import make_rng
from lcg.core.types import Activation
from lcg.core.types import ClassifierKind
from lcg.core.types import Polarity
from lcg.core.types import SamplerKind
from lcg.core.world import oracle_conditional_moments
from lcg.core.world import oracle_label


def _term(attribute, scale, polarity=Polarity.ASSERT):
    return GuidanceTerm(attribute=attribute, polarity=polarity, scale=ScaleSchedule.constant(scale))


def _source(latent, gamma=1.0):
    return SourceTerm(latent=np.asarray(latent, dtype=np.float64), gamma=ScaleSchedule.constant(gamma))


@pytest.fixture
def unit_pair():
    """在原点处 y=1 梯度分别为 (1, 0) 与 (0, 1) 的分类器."""
    return {
        "A": LatentClassifier.linear("A", [2.0, 0.0]),
        "B": LatentClassifier.linear("B", [0.0, 2.0]),
    }


class TestScaleSchedule:
    """常数与渐变尺度."""

    def test_constant(self):
        assert ScaleSchedule.constant(3.0).at(17, 100) == 3.0

    def test_ramp(self):
        ramp = ScaleSchedule(start=2.0, end=4.0)
        assert ramp.at(100, 100) == 2.0
        assert ramp.at(0, 100) == 4.0
        assert ramp.at(50, 100) == pytest.approx(3.0)
        assert ramp.final == 4.0

    def test_negative_rejected(self):
        with pytest.raises(GuidanceSpecError):
            ScaleSchedule(start=-1.0)


class TestComposeScore:
    """单点上的得分组合."""

    def test_worked_combination(self, unit_pair, schedule):
        spec = GuidanceSpec(
            terms=(_term("A", 2.0), _term("B", 1.0, Polarity.NEGATE)),
            source=_source([1.0, 1.0], gamma=3.0),
            use_unconditional_score=False,
        )
        assert np.allclose(compose_score(spec, None, unit_pair, schedule, np.zeros(2), 10), [5.0, 2.0])

    def test_zero_prior_adds_nothing(self, unit_pair, schedule):
        spec = GuidanceSpec(
            terms=(_term("A", 2.0), _term("B", 1.0, Polarity.NEGATE)),
            source=_source([1.0, 1.0], gamma=3.0),
        )
        out = compose_score(spec, zero_denoiser(2), unit_pair, schedule, np.zeros(2), 10)
        assert np.allclose(out, [5.0, 2.0])

    def test_empty_spec_is_unconditional_score(self, unit_pair, schedule):
        net = Denoiser.create(2, make_rng(0))
        z = np.array([0.3, -0.8])
        expected = score_from_noise(schedule, net.predict(z, 25), 25)
        assert np.array_equal(compose_score(GuidanceSpec(), net, unit_pair, schedule, z, 25), expected)
        zero_scales = GuidanceSpec(terms=(_term("A", 0.0), _term("B", 0.0)))
        assert zero_scales.is_unconditional
        assert np.array_equal(compose_score(zero_scales, net, unit_pair, schedule, z, 25), expected)

    def test_additivity(self, quadrants, schedule):
        classifiers = ideal_classifiers(quadrants)
        first = GuidanceSpec(terms=(_term("A", 1.5),), use_unconditional_score=False)
        second = GuidanceSpec(
            terms=(_term("B", 0.7, Polarity.NEGATE),), source=_source([1.0, -1.0], 2.0), use_unconditional_score=False
        )
        union = GuidanceSpec(terms=first.terms + second.terms, source=second.source, use_unconditional_score=False)
        for z in make_rng(3).standard_normal((10, 2)) * 2.0:
            total = compose_score(first, None, classifiers, schedule, z, 40) + compose_score(
                second, None, classifiers, schedule, z, 40
            )
            assert np.max(np.abs(compose_score(union, None, classifiers, schedule, z, 40) - total)) < 1e-12

    def test_negation_antisymmetry(self, quadrants, schedule):
        classifiers = ideal_classifiers(quadrants)
        asserted = GuidanceSpec(terms=(_term("A", 2.5),), use_unconditional_score=False)
        negated = GuidanceSpec(terms=(_term("A", 2.5, Polarity.NEGATE),), use_unconditional_score=False)
        for z in make_rng(4).standard_normal((10, 2)):
            a = compose_score(asserted, None, classifiers, schedule, z, 10)
            n = compose_score(negated, None, classifiers, schedule, z, 10)
            assert np.max(np.abs(a + n)) < 1e-12

    def test_missing_classifier(self, unit_pair, schedule):
        spec = GuidanceSpec(terms=(_term("C", 1.0),), use_unconditional_score=False)
        with pytest.raises(ClassifierNotFoundError) as exc_info:
            compose_score(spec, None, unit_pair, schedule, np.zeros(2), 1)
        assert "C" in str(exc_info.value)


class TestSpecValidation:
    """GuidanceSpec 构造及其映射形式."""

    def test_duplicate_attribute(self):
        with pytest.raises(GuidanceSpecError):
            GuidanceSpec(terms=(_term("A", 1.0), _term("A", 2.0, Polarity.NEGATE)))

    def test_empty_spec_without_prior(self):
        with pytest.raises(GuidanceSpecError):
            GuidanceSpec(use_unconditional_score=False)

    def test_targets(self):
        spec = GuidanceSpec(terms=(_term("A", 1.0), _term("B", 1.0, Polarity.NEGATE)))
        assert spec.targets == {"A": 1, "B": 0}

    def test_from_mapping_shorthand(self):
        spec = spec_from_mapping(
            {
                "scale": 4.0,
                "terms": ["A", "-B", {"attribute": "C", "scale": {"start": 1.0, "end": 2.0}}],
                "source": {"gamma": 5.0},
            },
            source_latent=np.zeros(3),
        )
        assert [t.attribute for t in spec.terms] == ["A", "B", "C"]
        assert spec.terms[1].polarity is Polarity.NEGATE
        assert spec.terms[0].scale.start == 4.0
        assert spec.terms[2].scale == ScaleSchedule(start=1.0, end=2.0)
        assert spec.source.gamma.start == 5.0

    def test_mapping_form_preserves_terms(self):
        spec = spec_from_mapping({"terms": [{"attribute": "A", "polarity": "negate", "scale": 2.0}]})
        again = spec_from_mapping(spec_to_mapping(spec))
        assert again.terms == spec.terms

    def test_unknown_polarity(self):
        with pytest.raises(GuidanceSpecError):
            spec_from_mapping({"terms": [{"attribute": "A", "polarity": "maybe"}]})


class TestLinearSolution:
    """闭式解及其不动点流."""

    def test_two_asserted_terms(self):
        classifiers = {
            "A": LatentClassifier.linear("A", [2.0, 0.0]),
            "B": LatentClassifier.linear("B", [0.0, 2.0]),
        }
        out = linear_solution((_term("A", 1.0), _term("B", 1.0)), _source([0.0, 0.0], 2.0), classifiers)
        assert np.allclose(out, [1.0, 1.0])

    def test_negated_term(self):
        classifiers = {"A": LatentClassifier.linear("A", [1.0, 0.0])}
        out = linear_solution((_term("A", 1.0, Polarity.NEGATE),), _source([0.0, 0.0], 1.0), classifiers)
        assert np.allclose(out, [-1.0, 0.0])

    def test_empty_terms_return_source(self):
        assert np.array_equal(linear_solution((), _source([3.0, -1.0]), {}), [3.0, -1.0])

    def test_uses_final_scales(self):
        classifiers = {"A": LatentClassifier.linear("A", [1.0])}
        term = GuidanceTerm(attribute="A", scale=ScaleSchedule(start=10.0, end=2.0))
        assert np.allclose(linear_solution((term,), _source([0.0]), classifiers), [2.0])

    def test_zero_gamma(self):
        with pytest.raises(GuidanceSpecError):
            linear_solution((), _source([0.0], 0.0), {})

    def test_mlp_classifier_rejected(self):
        net = init_mlp([2, 4, 1], make_rng(0), Activation.TANH)
        classifiers = {"A": LatentClassifier(kind=ClassifierKind.MLP, attribute="A", net=net)}
        with pytest.raises(ClassifierKindError):
            linear_solution((_term("A", 1.0),), _source([0.0, 0.0]), classifiers)

    def test_flow_converges_to_closed_form(self):
        rng = make_rng(12, "instances")
        for _ in range(50):
            d = int(rng.integers(1, 9))
            k = int(rng.integers(1, 5))
            names = [f"a{i}" for i in range(k)]
            classifiers = {n: LatentClassifier.linear(n, rng.standard_normal(d)) for n in names}
            terms = tuple(
                _term(n, float(rng.uniform(0.1, 3.0)), Polarity.ASSERT if rng.random() < 0.5 else Polarity.NEGATE)
                for n in names
            )
            gamma = float(rng.uniform(0.5, 4.0))
            source = _source(rng.standard_normal(d), gamma)
            flow = fixed_point_flow(terms, source, classifiers, np.zeros(d), step=0.5 / gamma, iters=200)
            assert np.linalg.norm(flow - linear_solution(terms, source, classifiers)) <= 1e-6

    def test_closed_form_is_fixed(self):
        classifiers = {"A": LatentClassifier.linear("A", [1.0, -2.0])}
        terms, source = (_term("A", 1.5),), _source([0.5, 0.5], 2.0)
        start = linear_solution(terms, source, classifiers)
        _, residuals = fixed_point_trace(terms, source, classifiers, start, step=0.1, iters=10)
        assert np.max(residuals) < 1e-12

    def test_geometric_rate(self):
        classifiers = {"A": LatentClassifier.linear("A", [1.0, 0.0])}
        _, residuals = fixed_point_trace(
            (_term("A", 1.0),), _source([0.0, 0.0], 1.0), classifiers, np.array([10.0, -5.0]), step=0.1, iters=20
        )
        assert np.allclose(residuals[1:] / residuals[:-1], 0.9, rtol=1e-9)

    def test_unstable_step(self):
        with pytest.raises(GuidanceSpecError):
            fixed_point_trace((), _source([0.0], 2.0), {}, np.zeros(1), step=1.0, iters=5)

    def test_saturating_variant_stays_bounded(self, quadrants):
        classifiers = ideal_classifiers(quadrants)
        z, _ = fixed_point_trace(
            (_term("A", 2.0),), _source([-1.0, 0.0], 1.0), classifiers, np.zeros(2), 0.2, 300, saturating=True
        )
        assert np.all(np.isfinite(z))
        assert z[0] > -1.0


class TestSourceTerm:
    """无学习先验时的源锚定."""

    def test_pull_is_monotone_in_gamma(self, schedule):
        hat = np.zeros((64, 2))
        distances = []
        for gamma in (0.0, 1.0, 5.0, 25.0):
            spec = GuidanceSpec(source=_source(np.zeros(2), gamma), use_unconditional_score=False)
            out = manipulate(spec, None, {}, schedule, hat, 50, make_rng(9, "edit"))
            distances.append(float(np.mean(np.linalg.norm(out - hat, axis=1))))
        assert all(b <= a for a, b in zip(distances, distances[1:]))
        assert distances[-1] < distances[0]

    def test_source_dominance(self, axes8d, schedule):
        classifiers = ideal_classifiers(axes8d, sharpness=1.0)
        hat = np.zeros((32, 8))

        def displacement(gamma):
            spec = GuidanceSpec(
                terms=(_term("A", 1.0),), source=_source(np.zeros(8), gamma), use_unconditional_score=False
            )
            out = manipulate(spec, None, classifiers, schedule, hat, 50, make_rng(2, "edit"))
            return float(np.mean(np.linalg.norm(out - hat, axis=1)))

        assert displacement(1e3) < 1e-2 * displacement(1.0)

    def test_manipulate_needs_source(self, schedule):
        spec = GuidanceSpec(terms=(_term("A", 1.0),), use_unconditional_score=False)
        with pytest.raises(GuidanceSpecError):
            manipulate(spec, None, {"A": LatentClassifier.linear("A", [1.0, 0.0])}, schedule, np.zeros(2), 10, make_rng(0))

    def test_prior_needs_denoiser(self, schedule):
        with pytest.raises(GuidanceSpecError):
            guided_sample(GuidanceSpec(), None, {}, schedule, 4, SamplerKind.DDPM, make_rng(0), dim=2)


class TestTrainedGuidance:
    """已训练象限模型上的引导生成与编辑."""

    def test_assert_both(self, trained_quadrants):
        world, _, s, result = trained_quadrants
        spec = GuidanceSpec(terms=(_term("A", 4.0), _term("B", 4.0)))
        out = guided_sample(spec, result.net, ideal_classifiers(world), s, 500, SamplerKind.DDPM, make_rng(1))
        labels = oracle_label(world, out)
        assert np.mean((labels[:, 0] == 1) & (labels[:, 1] == 1)) >= 0.9

    def test_assert_and_negate(self, trained_quadrants):
        world, _, s, result = trained_quadrants
        spec = GuidanceSpec(terms=(_term("A", 4.0), _term("B", 4.0, Polarity.NEGATE)))
        out = guided_sample(spec, result.net, ideal_classifiers(world), s, 500, SamplerKind.DDPM, make_rng(2))
        labels = oracle_label(world, out)
        assert np.mean(labels[:, 0] == 1) >= 0.9
        assert np.mean(labels[:, 1] == 0) >= 0.9

    def test_accuracy_grows_with_scale(self, trained_quadrants):
        world, _, s, result = trained_quadrants
        classifiers = ideal_classifiers(world)
        accs = []
        for alpha in (0.0, 1.0, 2.0, 4.0, 8.0):
            spec = GuidanceSpec(terms=(_term("A", alpha),))
            out = guided_sample(spec, result.net, classifiers, s, 400, SamplerKind.DDIM, make_rng(3, "grid"))
            accs.append(float(np.mean(oracle_label(world, out)[:, 0] == 1)))
        assert all(b >= a - 0.005 for a, b in zip(accs, accs[1:]))
        assert accs[-1] > accs[0] + 0.3

    def test_gamma_sweep_keeps_identity(self, trained_quadrants):
        world, data, s, result = trained_quadrants
        hat = data.latents[:200]
        distances = []
        for gamma in (0.0, 1.0, 5.0, 25.0, 125.0):
            spec = GuidanceSpec(source=_source(np.zeros(2), gamma))
            out = manipulate(spec, result.net, {}, s, hat, 50, make_rng(4, "edit"))
            distances.append(float(np.mean(np.linalg.norm(out - hat, axis=1))))
        assert all(b <= a for a, b in zip(distances, distances[1:]))
        assert distances[-1] < 0.1 * distances[0]

    def test_satisfied_condition_moves_less(self, trained_quadrants):
        world, data, s, result = trained_quadrants
        classifiers = ideal_classifiers(world)
        hat = data.latents[data.column("A") == 1][:200]

        def mean_shift(polarity):
            spec = GuidanceSpec(terms=(_term("A", 4.0, polarity),), source=_source(np.zeros(2), 1.0))
            out = manipulate(spec, result.net, classifiers, s, hat, 30, make_rng(5, "edit"))
            return out, float(np.mean(np.linalg.norm(out - hat, axis=1)))

        kept, kept_shift = mean_shift(Polarity.ASSERT)
        _, flipped_shift = mean_shift(Polarity.NEGATE)
        assert np.mean(oracle_label(world, kept)[:, 0] == 1) >= 0.95
        assert kept_shift < flipped_shift

    def test_single_sequential_edit_matches_manipulate(self, trained_quadrants):
        world, data, s, result = trained_quadrants
        classifiers = ideal_classifiers(world)
        spec = GuidanceSpec(terms=(_term("B", 4.0),), source=_source(np.zeros(2), 1.0))
        hat = data.latents[:20]
        single = manipulate(spec, result.net, classifiers, s, hat, 30, make_rng(6, "edit"))
        chained = sequential_edit([spec], result.net, classifiers, s, hat, 30, make_rng(6, "edit"))
        assert len(chained) == 1
        assert np.array_equal(chained[0], single)

    def test_two_orthogonal_edits(self, trained_quadrants):
        world, data, s, result = trained_quadrants
        classifiers = ideal_classifiers(world)
        source = _source(np.zeros(2), 1.0)
        edits = [
            GuidanceSpec(terms=(_term("A", 4.0),), source=source),
            GuidanceSpec(terms=(_term("B", 4.0),), source=source),
        ]
        steps = sequential_edit(edits, result.net, classifiers, s, data.latents[:200], 30, make_rng(7, "edit"))
        labels = oracle_label(world, steps[-1])
        assert np.mean((labels[:, 0] == 1) & (labels[:, 1] == 1)) >= 0.85

    def test_repeated_edit_moves_less(self, trained_quadrants):
        world, data, s, result = trained_quadrants
        classifiers = ideal_classifiers(world)
        hat = data.latents[data.column("A") == 0][:200]
        edit = GuidanceSpec(terms=(_term("A", 4.0),), source=_source(np.zeros(2), 1.0))
        first, second = sequential_edit([edit, edit], result.net, classifiers, s, hat, 30, make_rng(8, "edit"))
        first_shift = np.mean(np.linalg.norm(first - hat, axis=1))
        second_shift = np.mean(np.linalg.norm(second - first, axis=1))
        assert second_shift < first_shift


@pytest.fixture(scope="module")
def learned_classifiers(trained_quadrants):
    """在去噪器训练数据上拟合的线性分类器."""
    _, data, _, _ = trained_quadrants
    return {
        name: train_classifier(ClassifierKind.LINEAR, data, name, epochs=20, lr=0.05, rng=make_rng(21, name))[0]
        for name in ("A", "B")
    }


class TestLearnedClassifierGuidance:
    """由拟合分类器驱动的条件生成."""

    @pytest.mark.parametrize("sampler", [SamplerKind.DDPM, SamplerKind.DDIM])
    @pytest.mark.parametrize("b_polarity", [Polarity.ASSERT, Polarity.NEGATE])
    def test_condition_met_and_closer_than_prior(self, trained_quadrants, learned_classifiers, sampler, b_polarity):
        world, _, s, result = trained_quadrants
        spec = GuidanceSpec(terms=(_term("A", 4.0), _term("B", 4.0, b_polarity)))
        guided = guided_sample(spec, result.net, learned_classifiers, s, 1500, sampler, make_rng(22, "guided"))
        prior = sample(s, result.net, 1500, sampler, make_rng(22, "prior"))
        targets = spec.targets
        labels = oracle_label(world, guided)
        assert np.mean(labels[:, 0] == targets["A"]) >= 0.9
        assert np.mean(labels[:, 1] == targets["B"]) >= 0.9
        mean, cov = oracle_conditional_moments(world, targets)
        assert latent_fid(guided, mean, cov) <= 0.5 * latent_fid(prior, mean, cov)
