"""
Trajectory tokenization package.

Fixed-bin curvature/acceleration and xy-yaw schemes, the DCT codec, the
unified vocabulary layout and the reconstruction benchmark.

Usage:
    from traj_tokens import get_scheme, list_schemes

    scheme = get_scheme("fb-ka-A")
    tokens = scheme.tokenize(poses)
    poses_back = scheme.detokenize(tokens, poses[0], v0)
"""

from typing import Callable, Dict, Union

from errors import UsageError

from .base_scheme import IdentityScheme, Reconstruction, TrajectoryScheme
from .dct_codec import (
    DctChannel,
    DctConfig,
    DctScheme,
    dct_dequantize,
    dct_forward,
    dct_inverse,
    dct_quantize,
)
from .fixed_bin import (
    FixedBinKaScheme,
    FixedBinXyScheme,
    KaGridConfig,
    XyGridConfig,
    ka_detokenize,
    ka_tokenize,
    pack_token,
    unpack_token,
)
from .grid import UniformGrid, grid, grid_dequantize, grid_quantize
from .vocab import Modality, VocabLayout, vocab_map, vocab_unmap

DEFAULT_SCHEME = "fb-ka-A"


def _ka(k_lim: float, k_step: float, a_lim: float, a_step: float) -> KaGridConfig:
    return KaGridConfig(kappa_grid=grid(-k_lim, k_step, k_lim), a_grid=grid(-a_lim, a_step, a_lim))


def _xy(xy_lim: float, xy_step: float, yaw_lim: float, yaw_step: float) -> XyGridConfig:
    return XyGridConfig(
        x_grid=grid(-xy_lim, xy_step, xy_lim),
        y_grid=grid(-xy_lim, xy_step, xy_lim),
        yaw_grid=grid(-yaw_lim, yaw_step, yaw_lim),
    )


def _dct_xy(L_xy: int, L_yaw: int) -> DctConfig:
    return DctConfig(
        channels=[
            DctChannel(name="x", q=2.0, L=L_xy),
            DctChannel(name="y", q=2.0, L=L_xy),
            DctChannel(name="yaw", q=0.01, L=L_yaw),
        ]
    )


def _dct_ka(q_k: float, q_a: float, L: int) -> DctConfig:
    return DctConfig(channels=[DctChannel(name="kappa", q=q_k, L=L), DctChannel(name="a", q=q_a, L=L)])


# Codebook configurations A-D: narrow/wide range x coarse/fine step
KA_GRID_CONFIGS: Dict[str, KaGridConfig] = {
    "A": _ka(0.22, 0.01, 1.3, 0.1),
    "B": _ka(0.48, 0.01, 1.9, 0.1),
    "C": _ka(0.22, 0.005, 1.3, 0.05),
    "D": _ka(0.48, 0.005, 1.9, 0.05),
}

XY_GRID_CONFIGS: Dict[str, XyGridConfig] = {
    "A": _xy(16, 0.5, 0.11, 0.02),
    "B": _xy(22, 0.5, 0.36, 0.02),
    "C": _xy(16, 0.25, 0.11, 0.01),
    "D": _xy(22, 0.25, 0.36, 0.01),
}

DCT_CONFIGS: Dict[str, DctConfig] = {
    "xy-A": _dct_xy(80, 40),
    "xy-B": _dct_xy(120, 50),
    "ka-C": _dct_ka(0.01, 0.10, 80),
    "ka-D": _dct_ka(0.008, 0.08, 160),
}


def _fb_ka(name: str) -> Callable[..., TrajectoryScheme]:
    return lambda **kw: FixedBinKaScheme(KA_GRID_CONFIGS[name], name, **kw)


def _fb_xy(name: str) -> Callable[..., TrajectoryScheme]:
    return lambda **kw: FixedBinXyScheme(XY_GRID_CONFIGS[name], name, **kw)


def _dct(key: str) -> Callable[..., TrajectoryScheme]:
    return lambda **kw: DctScheme(DCT_CONFIGS[key], key.split("-")[1], **kw)


# Registry of available schemes
_SCHEME_REGISTRY: Dict[str, Callable[..., TrajectoryScheme]] = {
    **{f"fb-ka-{n}": _fb_ka(n) for n in KA_GRID_CONFIGS},
    **{f"fb-xy-{n}": _fb_xy(n) for n in XY_GRID_CONFIGS},
    **{f"dct-{k}": _dct(k) for k in DCT_CONFIGS},
    "identity": lambda **kw: IdentityScheme(**kw),
}


def get_scheme(name: str, **kwargs) -> TrajectoryScheme:
    """
    Build a scheme by registry name.

    Args:
        name: Scheme identifier (e.g., "fb-ka-B", "dct-xy-A", "identity")
        **kwargs: Forwarded to the scheme constructor (dt, eps)

    Raises:
        UsageError: If the name is not registered
    """
    if name not in _SCHEME_REGISTRY:
        available = ", ".join(_SCHEME_REGISTRY.keys())
        raise UsageError(f"Unknown scheme: {name}. Available schemes: {available}")
    return _SCHEME_REGISTRY[name](**kwargs)


def list_schemes() -> list:
    """Return list of available scheme names."""
    return list(_SCHEME_REGISTRY.keys())


def register_scheme(name: str, factory: Callable[..., TrajectoryScheme]) -> None:
    """Register a scheme factory; it must produce a TrajectoryScheme."""
    if not callable(factory):
        raise TypeError(f"{factory} is not callable")
    _SCHEME_REGISTRY[name] = factory


def codebook_size(config: Union[KaGridConfig, XyGridConfig, DctConfig]) -> int:
    return config.codebook_size


__all__ = [
    "DEFAULT_SCHEME",
    "DCT_CONFIGS",
    "KA_GRID_CONFIGS",
    "XY_GRID_CONFIGS",
    "DctChannel",
    "DctConfig",
    "DctScheme",
    "FixedBinKaScheme",
    "FixedBinXyScheme",
    "IdentityScheme",
    "KaGridConfig",
    "Modality",
    "Reconstruction",
    "TrajectoryScheme",
    "UniformGrid",
    "VocabLayout",
    "XyGridConfig",
    "codebook_size",
    "dct_dequantize",
    "dct_forward",
    "dct_inverse",
    "dct_quantize",
    "get_scheme",
    "grid",
    "grid_dequantize",
    "grid_quantize",
    "ka_detokenize",
    "ka_tokenize",
    "list_schemes",
    "pack_token",
    "register_scheme",
    "unpack_token",
    "vocab_map",
    "vocab_unmap",
]
