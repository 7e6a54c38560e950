import pytest
import torch

from deshadow.blocks import (
    DynamicResidualBlock,
    StackSpec,
    build_dmrb_stack,
    parameter_count,
    parameter_manifest,
)
from deshadow.errors import SpecError


def test_forced_gate_is_plain_residual():
    torch.manual_seed(0)
    block = DynamicResidualBlock(8).double()
    x = torch.randn(2, 8, 12, 12, dtype=torch.float64)
    block.force_identity_gate = True
    out = block(x)
    manual = x + block.conv2(torch.relu(block.conv1(x)))
    assert torch.equal(out, manual)


def test_zero_final_conv_is_identity():
    torch.manual_seed(0)
    block = DynamicResidualBlock(8).double()
    torch.nn.init.zeros_(block.conv2.weight)
    torch.nn.init.zeros_(block.conv2.bias)
    x = torch.randn(2, 8, 10, 10, dtype=torch.float64)
    assert torch.equal(block(x), x)


def test_gate_scale_range():
    torch.manual_seed(1)
    block = DynamicResidualBlock(8).double()
    x = torch.randn(1, 8, 9, 9, dtype=torch.float64)
    pooled = block.conv2(torch.relu(block.conv1(x))).mean(dim=(-2, -1), keepdim=True)
    scale = 2.0 * torch.sigmoid(block.gate_expand(torch.relu(block.gate_squeeze(pooled))))
    assert scale.min() > 0.0 and scale.max() < 2.0


def expected_parameter_count(spec: StackSpec) -> int:
    """Hand arithmetic from the stack blueprint."""

    def conv(cin, cout, k):
        return cin * cout * k * k + cout

    def dmrb(c):
        hidden = max(c // spec.gate_reduction, 1)
        return 2 * conv(c, c, 3) + conv(c, hidden, 1) + conv(hidden, c, 1)

    widths = spec.widths
    total = conv(spec.in_channels, widths[0], 3)  # stem
    for w in widths:
        total += spec.blocks_per_scale * dmrb(w)  # encoders
    for i in range(len(widths) - 1):
        total += conv(widths[i], widths[i + 1], 3)  # down
        total += widths[i + 1] * widths[i] * 2 * 2 + widths[i]  # transposed up
        total += conv(2 * widths[i], widths[i], 3)  # fuse
        total += spec.blocks_per_scale * dmrb(widths[i])  # decoders
    total += conv(widths[0], spec.out_channels, 3)  # head
    return total


def test_parameter_count_matches_manifest():
    spec = StackSpec(in_channels=4, out_channels=6, widths=(32, 64), blocks_per_scale=2)
    stack = build_dmrb_stack(spec)
    manifest = parameter_manifest(stack)
    assert sum(
        int(torch.tensor(shape).prod()) for shape in manifest.values()
    ) == parameter_count(stack)
    assert parameter_count(stack) == expected_parameter_count(spec)


def test_spec_validation():
    with pytest.raises(SpecError):
        build_dmrb_stack(StackSpec(4, 6, widths=()))
    with pytest.raises(SpecError):
        build_dmrb_stack(StackSpec(4, 6, widths=(8, 0)))
    with pytest.raises(SpecError):
        build_dmrb_stack(StackSpec(0, 6))
    with pytest.raises(SpecError):
        build_dmrb_stack(StackSpec(4, 6, blocks_per_scale=0))


@pytest.mark.parametrize("h,w", [(16, 16), (8, 24), (15, 13), (7, 9)])
def test_shape_contract_with_padding(h, w):
    torch.manual_seed(0)
    stack = build_dmrb_stack(StackSpec(4, 6, widths=(4, 8), blocks_per_scale=1))
    out = stack(torch.randn(2, 4, h, w))
    assert out.shape == (2, 6, h, w)


def test_three_scale_stack():
    torch.manual_seed(0)
    stack = build_dmrb_stack(StackSpec(3, 3, widths=(4, 8, 16), blocks_per_scale=1))
    assert stack.factor == 4
    out = stack(torch.randn(1, 3, 20, 20))
    assert out.shape == (1, 3, 20, 20)


def test_zero_head_outputs_zero():
    torch.manual_seed(0)
    stack = build_dmrb_stack(StackSpec(4, 6, widths=(4, 8), blocks_per_scale=1)).double()
    stack.zero_head_()
    out = stack(torch.randn(1, 4, 12, 12, dtype=torch.float64))
    assert torch.equal(out, torch.zeros_like(out))
