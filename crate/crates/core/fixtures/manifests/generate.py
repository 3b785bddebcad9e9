"""Regenerate the backbone layer manifests from torchvision's architecture definitions.

Classifier heads are dropped; the global pooling is replaced by the fixed re-ID
pooling window over a 256x128 input. Usage: python3 generate.py
"""
import torch
import torchvision

BN_VECTORS = 4  # gamma, beta, running_mean, running_var


def conv_kind(m):
    k = m.kernel_size[0]
    if m.groups > 1 and m.groups == m.in_channels == m.out_channels:
        return "DepthwiseConv"
    if k == 1 and m.groups == 1:
        return "PointwiseConv"
    return "Conv"


def build(model, features, residual_types, pool_name, out_path, header):
    rows = []
    seen = {}
    hooks = []

    def unique(name):
        n = seen.get(name, 0)
        seen[name] = n + 1
        return name if n == 0 else f"{name}.{n}"

    def leaf_hook(name):
        def hook(mod, inp, out):
            if isinstance(mod, torch.nn.Conv2d):
                params = sum(p.numel() for p in mod.parameters())
                k = mod.kernel_size[0]
                rows.append(
                    f"{unique(name)},{conv_kind(mod)},{params},{k},{mod.in_channels},"
                    f"{mod.out_channels},{mod.stride[0]},{out.shape[2]},{out.shape[3]}"
                )
            elif isinstance(mod, torch.nn.BatchNorm2d):
                rows.append(f"{unique(name)},BatchNorm,{BN_VECTORS * mod.num_features}")
            elif isinstance(mod, (torch.nn.ReLU, torch.nn.ReLU6)):
                rows.append(f"{unique(name)},ReLU,0")
        return hook

    def block_hook(name):
        def hook(mod, inp, out):
            if not getattr(mod, "use_res_connect", True):
                return
            row = f"{unique(name + '.add')},ResidualAdd,0"
            if isinstance(mod, torchvision.models.resnet.Bottleneck):
                # the add precedes the block's final ReLU
                rows.insert(len(rows) - 1, row)
            else:
                rows.append(row)
        return hook

    for name, mod in model.named_modules():
        if isinstance(mod, (torch.nn.Conv2d, torch.nn.BatchNorm2d, torch.nn.ReLU, torch.nn.ReLU6)):
            hooks.append(mod.register_forward_hook(leaf_hook(name)))
        elif isinstance(mod, residual_types):
            hooks.append(mod.register_forward_hook(block_hook(name)))

    model.eval()
    with torch.no_grad():
        out = features(torch.zeros(1, 3, 256, 128))
    rows.append(f"{pool_name},AvgPool,0")
    rows.append("loss,Loss,0")
    for h in hooks:
        h.remove()
    with open(out_path, "w") as f:
        f.write(header)
        f.write("# name,op_kind,param_count[,K,M,N,stride,out_h,out_w]\n")
        f.write("\n".join(rows) + "\n")
    return out.shape


resnet = torchvision.models.resnet50()
resnet_features = torch.nn.Sequential(*list(resnet.children())[:-2])
shape = build(
    resnet,
    resnet_features,
    (torchvision.models.resnet.Bottleneck,),
    "avgpool_16x8",
    "resnet50_backbone.csv",
    "# ResNet-50 without the FC classifier; 256x128 input; 2048-d embedding\n",
)
assert tuple(shape[2:]) == (8, 4), shape

mobilenet = torchvision.models.mobilenet_v2()
shape = build(
    mobilenet,
    mobilenet.features,
    (torchvision.models.mobilenetv2.InvertedResidual,),
    "avgpool_8x4",
    "mobilenet_v2_backbone.csv",
    "# MobileNetV2 without the classifier; 256x128 input; 1280-d embedding\n",
)
assert tuple(shape[2:]) == (8, 4), shape
