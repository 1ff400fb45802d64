"""TorchScript-compatible ViT patch tokenizer.

Mirrors the DINOv2 ViT layout (patch embed, cls token, learned position
embeddings, pre-norm blocks with LayerScale) so public checkpoints load by
state-dict key. The exported graph takes a (1, 3, H, W) image in [0, 1]
(H, W multiples of the patch size), bakes in the ImageNet normalization, and
returns the (1, N, D) patch tokens with N = (H/14) * (W/14).

Attention is evaluated one head at a time: a 73x73-token scene yields a
5330^2 attention matrix per head, and materializing all heads at once is too
much memory on CPU.
"""
from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.act(self.fc1(x)))


class Attention(nn.Module):
    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.scale = float(self.head_dim) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3, bias=True)
        self.proj = nn.Linear(dim, dim, bias=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, c = x.shape
        qkv = (
            self.qkv(x)
            .reshape(b, n, 3, self.num_heads, self.head_dim)
            .permute(2, 0, 3, 1, 4)
        )
        q, k, v = qkv[0], qkv[1], qkv[2]
        heads = []
        for h in range(self.num_heads):
            attn = torch.softmax((q[:, h] @ k[:, h].transpose(-2, -1)) * self.scale, dim=-1)
            heads.append(attn @ v[:, h])
        out = torch.stack(heads, dim=1).transpose(1, 2).reshape(b, n, c)
        return self.proj(out)


class LayerScale(nn.Module):
    def __init__(self, dim: int, init: float = 1e-5):
        super().__init__()
        self.gamma = nn.Parameter(init * torch.ones(dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.gamma


class Block(nn.Module):
    def __init__(self, dim: int, num_heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, eps=1e-6)
        self.attn = Attention(dim, num_heads)
        self.ls1 = LayerScale(dim)
        self.norm2 = nn.LayerNorm(dim, eps=1e-6)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))
        self.ls2 = LayerScale(dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.ls1(self.attn(self.norm1(x)))
        x = x + self.ls2(self.mlp(self.norm2(x)))
        return x


class PatchTokenizer(nn.Module):
    """Image -> per-patch token matrix, normalization included in the graph."""

    def __init__(
        self,
        dim: int = 1024,
        depth: int = 24,
        num_heads: int = 16,
        patch: int = 14,
        pretrain_grid: int = 37,
        in_bands: int = 3,
    ):
        super().__init__()
        self.patch = patch
        self.pretrain_grid = pretrain_grid
        self.patch_embed_proj = nn.Conv2d(in_bands, dim, kernel_size=patch, stride=patch)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, dim))
        self.pos_embed = nn.Parameter(torch.zeros(1, pretrain_grid * pretrain_grid + 1, dim))
        self.blocks = nn.ModuleList([Block(dim, num_heads) for _ in range(depth)])
        self.norm = nn.LayerNorm(dim, eps=1e-6)
        mean = torch.tensor(IMAGENET_MEAN).reshape(1, 3, 1, 1)
        std = torch.tensor(IMAGENET_STD).reshape(1, 3, 1, 1)
        if in_bands != 3:
            mean = torch.full((1, in_bands, 1, 1), 0.45)
            std = torch.full((1, in_bands, 1, 1), 0.225)
        self.register_buffer("pixel_mean", mean)
        self.register_buffer("pixel_std", std)
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        nn.init.trunc_normal_(self.cls_token, std=0.02)

    def _interpolate_pos(self, rows: int, cols: int) -> torch.Tensor:
        g = self.pretrain_grid
        cls_pos = self.pos_embed[:, :1]
        patch_pos = self.pos_embed[:, 1:]
        if rows == g and cols == g:
            return torch.cat([cls_pos, patch_pos], dim=1)
        dim = patch_pos.shape[2]
        grid = patch_pos.reshape(1, g, g, dim).permute(0, 3, 1, 2)
        grid = F.interpolate(grid, size=(rows, cols), mode="bicubic", align_corners=False)
        flat = grid.permute(0, 2, 3, 1).reshape(1, rows * cols, dim)
        return torch.cat([cls_pos, flat], dim=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[2] % self.patch != 0 or x.shape[3] % self.patch != 0:
            raise ValueError("input height and width must be multiples of the patch size")
        x = (x - self.pixel_mean) / self.pixel_std
        t = self.patch_embed_proj(x)
        rows, cols = t.shape[2], t.shape[3]
        tokens = t.flatten(2).transpose(1, 2)
        cls = self.cls_token.expand(tokens.shape[0], -1, -1)
        seq = torch.cat([cls, tokens], dim=1) + self._interpolate_pos(rows, cols)
        for block in self.blocks:
            seq = block(seq)
        seq = self.norm(seq)
        return seq[:, 1:, :]


# DINOv2 checkpoint keys -> this module's names. Everything else matches.
_KEY_RENAMES = {"patch_embed.proj.weight": "patch_embed_proj.weight",
                "patch_embed.proj.bias": "patch_embed_proj.bias"}
_IGNORED_KEYS = ("mask_token",)


def load_dinov2_state_dict(model: PatchTokenizer, state: dict) -> None:
    """Load a DINOv2-format checkpoint into the tokenizer, strict on the rest."""
    mapped = {}
    for key, value in state.items():
        if key in _IGNORED_KEYS:
            continue
        mapped[_KEY_RENAMES.get(key, key)] = value
    missing, unexpected = model.load_state_dict(mapped, strict=False)
    missing = [k for k in missing if not k.startswith("pixel_")]
    if missing or unexpected:
        raise ValueError(
            f"checkpoint does not match the ViT layout "
            f"(missing {missing[:5]}, unexpected {unexpected[:5]})"
        )
