"""A small vision transformer with checkpoint-compatible parameter names.

Parameter names follow the layout used by the common self-supervised ViT
releases (cls_token, pos_embed, patch_embed.proj.*, blocks.N.{norm1,attn
.qkv,attn.proj,norm2,mlp.fc1,mlp.fc2}.*, norm.*), so published ViT-S/16
state dicts load directly. Heads and projection layers that sit on top of
the trunk in full training checkpoints are stripped before loading.

Without a weights file the trunk is randomly initialized from a fixed
seed, which keeps extraction deterministic end to end.
"""
from __future__ import annotations

import math

import torch
from torch import nn


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.heads, d // self.heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, d)
        return self.proj(out)


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.act(self.fc1(x)))


class Block(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class PatchEmbed(nn.Module):
    def __init__(self, patch_size: int, dim: int):
        super().__init__()
        self.proj = nn.Conv2d(3, dim, kernel_size=patch_size, stride=patch_size)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.proj(x).flatten(2).transpose(1, 2)  # B, N, D


class VisionTransformer(nn.Module):
    def __init__(self, resolution: int, patch_size: int, dim: int, depth: int, heads: int):
        super().__init__()
        if resolution % patch_size != 0:
            raise ValueError(f"resolution {resolution} not divisible by patch size {patch_size}")
        self.grid = resolution // patch_size
        n = self.grid * self.grid
        self.patch_embed = PatchEmbed(patch_size, dim)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, dim))
        self.pos_embed = nn.Parameter(torch.zeros(1, n + 1, dim))
        self.blocks = nn.ModuleList(Block(dim, heads) for _ in range(depth))
        self.norm = nn.LayerNorm(dim)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Return (class tokens, patch tokens) after the final norm."""
        x = self.patch_embed(x)
        cls = self.cls_token.expand(x.shape[0], -1, -1)
        x = torch.cat([cls, x], dim=1) + self.pos_embed
        for block in self.blocks:
            x = block(x)
        x = self.norm(x)
        return x[:, 0], x[:, 1:]

    def seeded_init_(self, seed: int) -> None:
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            for p in self.parameters():
                if p.dim() > 1:
                    nn.init.trunc_normal_(p, std=0.02)
                else:
                    nn.init.zeros_(p)
            nn.init.trunc_normal_(self.cls_token, std=0.02)
            nn.init.trunc_normal_(self.pos_embed, std=0.02)
            # layernorm scale must start at 1, not 0
            for mod in self.modules():
                if isinstance(mod, nn.LayerNorm):
                    nn.init.ones_(mod.weight)
                    nn.init.zeros_(mod.bias)


def normalize_state_dict(obj: object) -> dict[str, torch.Tensor]:
    """Accept raw trunk state dicts and full training checkpoints.

    Full checkpoints nest the trunk under teacher/student/state_dict/model
    and may prefix names with "module." / "backbone."; projection heads are
    dropped.
    """
    if not isinstance(obj, dict):
        raise ValueError("weights file does not contain a state dict")
    for key in ("teacher", "student", "state_dict", "model"):
        inner = obj.get(key)
        if isinstance(inner, dict) and any(torch.is_tensor(v) for v in inner.values()):
            obj = inner
            break
    cleaned: dict[str, torch.Tensor] = {}
    for name, value in obj.items():
        if not torch.is_tensor(value):
            continue
        for prefix in ("module.", "backbone."):
            if name.startswith(prefix):
                name = name[len(prefix):]
        if name.startswith("head"):
            continue
        cleaned[name] = value
    if "cls_token" not in cleaned or "patch_embed.proj.weight" not in cleaned:
        raise ValueError("state dict lacks the expected trunk parameters")
    return cleaned


def arch_from_state_dict(sd: dict[str, torch.Tensor]) -> tuple[int, int, int]:
    """Infer (dim, patch_size, depth) from trunk parameter shapes."""
    dim = int(sd["cls_token"].shape[-1])
    patch_size = int(sd["patch_embed.proj.weight"].shape[-1])
    depth = 1 + max(
        (int(k.split(".")[1]) for k in sd if k.startswith("blocks.")), default=-1
    )
    return dim, patch_size, depth


def pos_embed_resolution(sd: dict[str, torch.Tensor], patch_size: int) -> int:
    n = int(sd["pos_embed"].shape[1]) - 1
    side = int(math.isqrt(n))
    if side * side != n:
        raise ValueError(f"pos_embed holds {n} patch positions, not a square grid")
    return side * patch_size
