import numpy as np
import pytest

from ncacf.data import (ConfidenceScheme, InteractionTriplets, SparsePlaycounts)
from ncacf.numerics import finite_diff_grad
from ncacf.training import full_loss, full_loss_gradients


def random_triplets(num_users, num_items, density, seed, tau=7.0):
    """Random playcount triplets with counts straddling the threshold."""
    rng = np.random.default_rng(seed)
    mask = rng.random((num_users, num_items)) < density
    users, items = np.nonzero(mask)
    counts = rng.integers(1, 20, size=users.size).astype(float)
    return InteractionTriplets.create(users, items, counts, num_users, num_items)


@pytest.fixture
def tiny_data():
    """4 users x 3 items with a mix of above/below-threshold counts."""
    users = np.array([0, 0, 1, 2, 2, 3])
    items = np.array([0, 2, 1, 0, 1, 2])
    counts = np.array([9.0, 3.0, 12.0, 7.0, 1.0, 8.0])
    t = InteractionTriplets.create(users, items, counts, 4, 3)
    return t, SparsePlaycounts.from_triplets(t), ConfidenceScheme()


def model_param_arrays(model, owned):
    """Yield (group, name, live array) for every owned parameter of a model."""
    if "W" in owned:
        yield "W", "W", model.embeddings.W
    if "H" in owned and model.embeddings.H is not None:
        yield "H", "H", model.embeddings.H
    if "extractor" in owned and model.extractor is not None:
        for name, arr in model.extractor.param_dict().items():
            yield "extractor", name, arr
    if "interaction" in owned and model.interaction is not None:
        for name, arr in model.interaction.param_dict().items():
            yield "interaction", name, arr


def gradcheck_full_loss(model, data, scheme, features, lam_w, lam_h, owned,
                        item_pool=None, h=1e-5, rtol=1e-4, atol=1e-7):
    """Assert every owned parameter's analytic gradient matches central
    finite differences of the full objective. Returns the parameter count."""
    _, grads = full_loss_gradients(model, data, scheme, features, lam_w, lam_h,
                                   owned, item_pool)
    checked = 0
    for group, name, arr in model_param_arrays(model, owned):
        analytic = grads[group] if group in ("W", "H") else grads[group][name]
        original = arr.copy()

        def f(values, _arr=arr):
            _arr[...] = values
            return full_loss(model, data, scheme, features, lam_w, lam_h, item_pool)

        numeric = finite_diff_grad(f, original.copy(), h=h)
        arr[...] = original
        np.testing.assert_allclose(
            analytic, numeric, rtol=rtol, atol=atol,
            err_msg=f"gradient mismatch for {group}/{name}")
        checked += analytic.size
    return checked
