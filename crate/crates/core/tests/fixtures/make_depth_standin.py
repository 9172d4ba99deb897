"""Writes depth_standin.onnx: a fixed-weight encoder/decoder with the input and
output contract of a monocular inverse-depth network (1x3xHxW float in,
1xHxW float out). Every kernel is a positive average, so the output is a
blurred luminance: bright regions read as near. Used by the neural backend
tests in place of a downloaded model."""
import torch
import torch.nn as nn


def avg_conv(cin, cout, stride=1):
    c = nn.Conv2d(cin, cout, 3, stride=stride, padding=1)
    with torch.no_grad():
        c.weight.fill_(1.0 / (cin * 9))
        c.bias.zero_()
    return c


class Standin(nn.Module):
    def __init__(self):
        super().__init__()
        self.encoder = nn.Sequential(
            avg_conv(3, 32, 2),
            *[avg_conv(32, 32) for _ in range(4)],
            avg_conv(32, 32, 2),
            *[avg_conv(32, 32) for _ in range(2)],
        )
        self.up = nn.Upsample(scale_factor=4, mode="bilinear", align_corners=False)
        self.head = avg_conv(32, 1)

    def forward(self, x):
        return self.head(self.up(self.encoder(x))).squeeze(1)


if __name__ == "__main__":
    import sys

    out = sys.argv[1] if len(sys.argv) > 1 else "depth_standin.onnx"
    model = Standin().eval()
    torch.onnx.export(
        model,
        torch.zeros(1, 3, 256, 256),
        out,
        dynamo=False,
        opset_version=13,
        input_names=["input"],
        output_names=["depth"],
        dynamic_axes={"input": {2: "height", 3: "width"}, "depth": {1: "height", 2: "width"}},
    )
