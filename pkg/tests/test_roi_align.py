"""RoIAlign: exact bilinear values, gradients, degenerate boxes."""

import pytest
import torch

from plainseg.errors import DataError
from plainseg.model.roi_align import assign_pyramid_levels, roi_align

from oracles import finite_difference_grad, relative_error


def test_constant_map_pools_constant():
    features = torch.full((3, 8, 8), 2.5)
    boxes = torch.tensor([[1.0, 1.0, 6.0, 6.0], [0.0, 0.0, 8.0, 8.0]])
    out = roi_align(features, boxes, stride=1.0, output_size=7, sampling_ratio=2)
    assert out.shape == (2, 3, 7, 7)
    assert torch.allclose(out, torch.full_like(out, 2.5))


def test_single_cell_box_gives_bilinear_value():
    torch.manual_seed(0)
    features = torch.randn(1, 4, 4, dtype=torch.float64)
    # box covering exactly feature cell (1, 2): one sample at its center,
    # which sits at the midpoint of the four neighboring pixel centers
    boxes = torch.tensor([[2.0, 1.0, 3.0, 2.0]], dtype=torch.float64)
    out = roi_align(features, boxes, stride=1.0, output_size=1, sampling_ratio=1)
    # sample point (2.5, 1.5) coincides with the center of pixel (1, 2)
    assert out[0, 0, 0, 0] == pytest.approx(float(features[0, 1, 2]), abs=1e-12)

    # box straddling two cells: sample midway between two pixel centers
    boxes = torch.tensor([[2.5, 1.0, 3.5, 2.0]], dtype=torch.float64)
    out = roi_align(features, boxes, stride=1.0, output_size=1, sampling_ratio=1)
    manual = 0.5 * float(features[0, 1, 2]) + 0.5 * float(features[0, 1, 3])
    assert out[0, 0, 0, 0] == pytest.approx(manual, abs=1e-12)


def test_stride_scaling():
    features = torch.arange(16, dtype=torch.float64).reshape(1, 4, 4)
    # image-space box [0, 16)^2 over a stride-4 map is the whole map
    a = roi_align(features, torch.tensor([[0.0, 0.0, 16.0, 16.0]],
                                         dtype=torch.float64),
                  stride=4.0, output_size=2, sampling_ratio=2)
    b = roi_align(features, torch.tensor([[0.0, 0.0, 4.0, 4.0]],
                                         dtype=torch.float64),
                  stride=1.0, output_size=2, sampling_ratio=2)
    assert torch.allclose(a, b, atol=1e-12)


def test_degenerate_box_is_clamped_not_nan():
    features = torch.randn(2, 6, 6)
    boxes = torch.tensor([[3.0, 3.0, 3.0, 3.0]])
    out = roi_align(features, boxes, stride=1.0, output_size=3, sampling_ratio=1)
    assert torch.isfinite(out).all()


def test_empty_boxes():
    features = torch.randn(2, 6, 6)
    out = roi_align(features, torch.zeros((0, 4)), stride=1.0, output_size=3)
    assert out.shape == (0, 2, 3, 3)


def test_bad_shapes_raise():
    with pytest.raises(DataError):
        roi_align(torch.zeros(2, 3), torch.zeros((1, 4)), 1.0, 2)
    with pytest.raises(DataError):
        roi_align(torch.zeros(1, 4, 4), torch.zeros((1, 3)), 1.0, 2)


def test_gradient_matches_finite_differences():
    torch.manual_seed(1)
    features = torch.randn(2, 6, 6, dtype=torch.float64, requires_grad=True)
    boxes = torch.tensor([[0.7, 1.1, 4.3, 5.2], [2.0, 0.5, 5.5, 3.0]],
                         dtype=torch.float64)
    weights = torch.randn(2, 2, 3, 3, dtype=torch.float64)

    def loss_fn():
        return (roi_align(features, boxes, stride=1.0, output_size=3,
                          sampling_ratio=2) * weights).sum()

    loss = loss_fn()
    loss.backward()
    analytic = features.grad.clone()
    with torch.no_grad():
        numeric = finite_difference_grad(loss_fn, features.data, eps=1e-6)
    for a, n in zip(analytic.reshape(-1), numeric.reshape(-1)):
        if abs(float(n)) > 1e-10 or abs(float(a)) > 1e-10:
            assert relative_error(float(a), float(n)) < 1e-3


def test_level_assignment():
    boxes = torch.tensor([
        [0.0, 0.0, 48.0, 48.0],    # canonical size -> canonical level
        [0.0, 0.0, 96.0, 96.0],    # double -> one level up
        [0.0, 0.0, 24.0, 24.0],    # half -> one level down
        [0.0, 0.0, 1.0, 1.0],      # tiny -> clamped to 0
        [0.0, 0.0, 2000.0, 2000.0],  # huge -> clamped to top
    ])
    levels = assign_pyramid_levels(boxes, num_levels=5, canonical_index=2,
                                   canonical_size=48.0)
    assert levels.tolist() == [2, 3, 1, 0, 4]
