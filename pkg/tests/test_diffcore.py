import numpy as np
import pytest

from joint_annotator.corpus import Task
from joint_annotator.diffcore import (
    Graph,
    ParamStore,
    Tensor,
    adamw_step,
    clip_grad_norm,
    glorot_uniform,
)
from joint_annotator.diffcore import ops
from joint_annotator.diffcore.gradcheck import analytic_grads, max_relative_error
from joint_annotator.diffcore.tensor import current_graph
from joint_annotator.misc import CheckpointError, NonFiniteError, ShapeError


def param(rng, *shape) -> Tensor:
    return Tensor(rng.normal(size=shape), requires_grad=True)


def weighted(out: Tensor, rng_seed: int = 7) -> Tensor:
    weights = np.random.default_rng(rng_seed).normal(size=out.shape)
    return ops.sum(ops.mul(out, weights))


OP_CASES = {
    "matmul": ([(3, 4), (4, 2)], lambda a, b: ops.matmul(a, b)),
    "add_row": ([(3, 4), (4,)], lambda a, b: ops.add(a, b)),
    "add_scalar": ([(3, 4), ()], lambda a, b: ops.add(a, b)),
    "sub": ([(3, 4), (3, 4)], lambda a, b: ops.sub(a, b)),
    "mul": ([(3, 4), (3, 4)], lambda a, b: ops.mul(a, b)),
    "scale": ([(3, 4)], lambda a: ops.scale(a, -2.5)),
    "concat": ([(3, 4), (3, 2)], lambda a, b: ops.concat([a, b])),
    "concat_rows": ([(1, 4), (3, 4)], lambda a, b: ops.concat([a, b], axis=0)),
    "take_rows": ([(3, 4)], lambda a: ops.take_rows(a, [2, 0, 2, 1])),
    "transpose": ([(3, 4)], lambda a: ops.transpose(a)),
    "relu": ([(3, 4)], lambda a: ops.relu(a)),
    "tanh": ([(3, 4)], lambda a: ops.tanh(a)),
    "softplus": ([(3, 4)], lambda a: ops.softplus(a)),
    "softmax": ([(3, 4)], lambda a: ops.softmax(a)),
    "log_softmax": ([(3, 4)], lambda a: ops.log_softmax(a)),
    "logsumexp": ([(3, 4)], lambda a: ops.logsumexp(a)),
    "mean": ([(3, 4)], lambda a: ops.mean(a)),
    "bilinear": ([(3, 4), (4, 2, 5), (3, 5)], lambda x, u, y: ops.bilinear(x, u, y)),
}


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_op_gradients_match_finite_differences(name, rng):
    shapes, build = OP_CASES[name]
    inputs = [param(rng, *shape) for shape in shapes]
    error = max_relative_error(lambda: weighted(build(*inputs)), inputs, floor=1e-3)
    assert error < 1e-6


def test_cross_entropy_gradients(rng):
    logits = param(rng, 3, 4)
    mask = np.ones((3, 4), dtype=bool)
    mask[0, 3] = mask[2, 1] = False
    assert max_relative_error(lambda: ops.cross_entropy(logits, [1, 2, 0]), [logits]) < 1e-6
    assert max_relative_error(lambda: ops.cross_entropy(logits, [1, 2, 0], mask), [logits]) < 1e-6


def test_softmax_of_zero_logits_is_uniform():
    np.testing.assert_allclose(ops.softmax(Tensor(np.zeros((1, 4)))).data, [[0.25] * 4])


def test_concat_shape():
    out = ops.concat([Tensor(np.zeros((3, 4))), Tensor(np.ones((3, 100)))])
    assert out.shape == (3, 104)


def test_sum_gives_all_ones_gradient(rng):
    w = param(rng, 3, 4)
    (grad,) = analytic_grads(lambda: ops.sum(w), [w])
    np.testing.assert_array_equal(grad, np.ones((3, 4)))


def test_cross_entropy_closed_form_gradient():
    logits = Tensor(np.zeros((1, 5)), requires_grad=True)
    (grad,) = analytic_grads(lambda: ops.cross_entropy(logits, [2]), [logits])
    expected = np.full((1, 5), 0.2)
    expected[0, 2] -= 1.0
    np.testing.assert_allclose(grad, expected)


def test_masked_cross_entropy_excludes_columns():
    logits = Tensor(np.zeros((1, 4)))
    mask = np.array([[True, False, True, True]])
    assert ops.cross_entropy(logits, [0], mask).item() == pytest.approx(np.log(3))
    with pytest.raises(ShapeError):
        ops.cross_entropy(logits, [1], mask)


def test_backward_accumulates_without_zero_grad(rng):
    w = param(rng, 2, 2)
    for _ in range(2):
        with Graph() as graph:
            loss = ops.sum(w)
        graph.backward(loss)
    np.testing.assert_array_equal(w.grad, np.full((2, 2), 2.0))


def test_backward_requires_scalar(rng):
    w = param(rng, 2, 2)
    with Graph() as graph:
        out = ops.relu(w)
        with pytest.raises(ShapeError):
            graph.backward(out)


def test_nothing_is_recorded_outside_a_graph(rng):
    w = param(rng, 2, 2)
    assert current_graph() is None
    out = ops.tanh(w)
    assert not out.tracked
    with Graph() as graph:
        ops.tanh(w)
    assert len(graph.nodes) == 1
    assert current_graph() is None


def test_non_finite_output_names_the_op():
    with pytest.raises(NonFiniteError, match="scale"):
        ops.scale(Tensor([1e308]), 10.0)


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        ops.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
    with pytest.raises(ShapeError):
        ops.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros(2)))


def test_joint_loss_gradient_on_three_token_sentence(tiny_model, hanoi_sentence):
    model = tiny_model
    params = [p for _, p in model.store.items()]

    def loss():
        return ops.add(
            ops.add(
                ops.scale(model.task_loss(Task.POS, [hanoi_sentence]), 0.4),
                ops.scale(model.task_loss(Task.NER, [hanoi_sentence]), 0.2),
            ),
            ops.scale(model.task_loss(Task.DEP, [hanoi_sentence]), 0.4),
        )

    assert max_relative_error(loss, params, samples=4) < 1e-4


def test_param_store_rejects_duplicates():
    store = ParamStore()
    store.add("w", np.zeros(2))
    with pytest.raises(ShapeError):
        store.add("w", np.zeros(2))


def test_param_store_round_trip_is_bit_exact(tmp_path, rng):
    store = ParamStore()
    store.add("a", rng.normal(size=(3, 4)))
    store.add("b", rng.normal(size=(2, 5, 3)))
    store.save(str(tmp_path))

    manifest = (tmp_path / "params.txt").read_text(encoding="utf-8").splitlines()
    assert manifest == ["a\t3,4\t0", "b\t2,5,3\t96"]

    other = ParamStore()
    other.add("a", np.zeros((3, 4)))
    other.add("b", np.zeros((2, 5, 3)))
    other.load(str(tmp_path))
    for (_, x), (_, y) in zip(store.items(), other.items()):
        assert x.data.tobytes() == y.data.tobytes()


def test_param_store_load_errors(tmp_path):
    store = ParamStore()
    store.add("a", np.zeros((3, 4)))
    store.save(str(tmp_path))

    mismatched = ParamStore()
    mismatched.add("a", np.zeros((4, 3)))
    with pytest.raises(CheckpointError):
        mismatched.load(str(tmp_path))

    larger = ParamStore()
    larger.add("a", np.zeros((3, 4)))
    larger.add("b", np.zeros(2))
    with pytest.raises(CheckpointError, match="missing"):
        larger.load(str(tmp_path))

    with pytest.raises(CheckpointError):
        ParamStore().load(str(tmp_path))


def adamw_reference(p, g, steps, lr, wd, betas=(0.9, 0.999), eps=1e-8):
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for t in range(1, steps + 1):
        m = betas[0] * m + (1 - betas[0]) * g
        v = betas[1] * v + (1 - betas[1]) * g * g
        p = p * (1 - lr * wd)
        p = p - lr * (m / (1 - betas[0] ** t)) / (np.sqrt(v / (1 - betas[1] ** t)) + eps)
    return p


@pytest.mark.parametrize("steps", [1, 2])
def test_adamw_matches_closed_form(rng, steps):
    store = ParamStore()
    start = rng.normal(size=(2, 3))
    grad = rng.normal(size=(2, 3))
    w = store.add("w", start)
    for _ in range(steps):
        w.grad[...] = grad
        adamw_step(store, lr=0.01, weight_decay=0.1)

    np.testing.assert_allclose(w.data, adamw_reference(start, grad, steps, 0.01, 0.1), rtol=1e-12)
    np.testing.assert_array_equal(w.grad, grad)
    assert store.step == steps


def test_adamw_single_step_is_sign_like(rng):
    store = ParamStore()
    w = store.add("w", np.zeros(3))
    w.grad[...] = [2.0, -0.5, 1e-3]
    adamw_step(store, lr=0.1, weight_decay=0.0)
    np.testing.assert_allclose(w.data, [-0.1, 0.1, -0.1], rtol=1e-4)


def test_adamw_fixed_point_without_grad_or_decay(rng):
    store = ParamStore()
    start = rng.normal(size=4)
    w = store.add("w", start)
    adamw_step(store, lr=0.5, weight_decay=0.0)
    np.testing.assert_array_equal(w.data, start)


def test_clip_grad_norm(rng):
    store = ParamStore()
    w = store.add("w", np.zeros(2))
    w.grad[...] = [3.0, 4.0]
    assert clip_grad_norm(store, 1.0) == pytest.approx(5.0)
    np.testing.assert_allclose(np.linalg.norm(w.grad), 1.0)


def test_glorot_bounds(rng):
    values = glorot_uniform(rng, 4, 2, (4, 2))
    assert np.all(np.abs(values) <= np.sqrt(6 / 6))
