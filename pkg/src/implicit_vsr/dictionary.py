"""Kernel atoms parameterized as coordinate networks.

Each atom is a small sinusoidal MLP mapping a 2-D coordinate in [-1, 1]^2 to a
scalar. Rendering the same atom on lattices of size 1, 3, 5, ... yields a
multi-scale dictionary whose sub-dictionaries sample one continuous function.
The smallest scale is not rendered: it holds a fixed delta kernel.
"""

from dataclasses import dataclass
import math

import numpy as np
import torch
import torch.nn as nn

from .errors import ValidationError


class InrAtom(nn.Module):
    """Coordinate MLP ``(x, y) -> value`` with sine activations.

    The first-layer pre-activation is multiplied by ``frequency``; the other
    hidden layers use a plain sine and the output layer is linear.

    Args:
        frequency (float): Initial sinusoidal frequency of the first layer.
        hidden_features (int): Width of every hidden layer. Default: 32.
        hidden_layers (int): Number of sine layers. Default: 2.
        atom_index (int): 1-based position of the atom in its dictionary.
    """

    def __init__(self, frequency, hidden_features=32, hidden_layers=2, atom_index=1):
        super().__init__()
        if hidden_layers < 1:
            raise ValidationError(f"hidden_layers must be >= 1, got {hidden_layers}")
        self.atom_index = atom_index
        self.frequency = nn.Parameter(torch.tensor(float(frequency)))
        dims = [2] + [hidden_features] * hidden_layers
        self.hidden = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))
        self.out = nn.Linear(hidden_features, 1)

    def reset_parameters(self, generator=None):
        # first layer U(-1/fan_in, 1/fan_in); later layers U(-sqrt(6/fan_in), sqrt(6/fan_in))
        # so sine pre-activations keep roughly unit variance through depth.
        with torch.no_grad():
            for k, layer in enumerate(list(self.hidden) + [self.out]):
                fan_in = layer.in_features
                bound = 1.0 / fan_in if k == 0 else math.sqrt(6.0 / fan_in)
                for p in (layer.weight, layer.bias):
                    p.copy_(torch.rand(p.shape, generator=generator, dtype=p.dtype) * 2 * bound - bound)

    def forward(self, coords):
        """Evaluate the atom at ``coords`` of shape (..., 2)."""
        h = torch.sin(self.frequency * self.hidden[0](coords))
        for layer in self.hidden[1:]:
            h = torch.sin(layer(h))
        return self.out(h).squeeze(-1)


def init_atoms(n_atoms, freq_low=2.0, freq_high=16.0, seed=0, hidden_features=32, hidden_layers=2):
    """Create ``n_atoms`` atoms with frequencies drawn uniformly from [freq_low, freq_high].

    The result depends only on the arguments: the same seed gives bit-identical
    parameters.
    """
    if n_atoms < 1:
        raise ValidationError(f"n_atoms must be >= 1, got {n_atoms}")
    if not 0 < freq_low <= freq_high:
        raise ValidationError(f"invalid frequency range [{freq_low}, {freq_high}]")
    gen = torch.Generator().manual_seed(seed)
    freqs = freq_low + (freq_high - freq_low) * torch.rand(n_atoms, generator=gen, dtype=torch.float64)
    atoms = []
    for n in range(n_atoms):
        atom = InrAtom(freqs[n].item(), hidden_features, hidden_layers, atom_index=n + 1)
        atom.reset_parameters(gen)
        atoms.append(atom)
    return atoms


def lattice(size, dtype=torch.float32, device=None):
    """Cell-centre coordinates of a ``size`` x ``size`` lattice mapped into [-1, 1]^2.

    Returns a (size, size, 2) tensor whose last axis is (row, column) coordinate.
    """
    if size < 1 or size % 2 == 0:
        raise ValidationError(f"kernel size must be odd and positive, got {size}")
    if size == 1:
        axis = torch.zeros(1, dtype=dtype, device=device)
    else:
        axis = torch.linspace(-1.0, 1.0, size, dtype=dtype, device=device)
    rows, cols = torch.meshgrid(axis, axis, indexing="ij")
    return torch.stack([rows, cols], dim=-1)


def render_atom(atom, size):
    """Sample ``atom`` on a ``size`` x ``size`` lattice; differentiable in its parameters."""
    p = atom.out.weight
    return atom(lattice(size, dtype=p.dtype, device=p.device))


def kernel_size(scale):
    """Side length of the atoms at 1-based scale index ``scale``."""
    return 2 * scale - 1


@dataclass
class MultiScaleDictionary:
    """Rendered atoms, one (N, M_r, M_r) tensor per scale r = 1..R."""

    scales: list

    @property
    def num_scales(self):
        return len(self.scales)

    @property
    def num_atoms(self):
        return self.scales[0].shape[0]

    @property
    def sizes(self):
        return [d.shape[-1] for d in self.scales]

    @property
    def max_size(self):
        return self.scales[-1].shape[-1]

    def padded(self):
        """All atoms zero-padded and centred to the largest size: (R, N, M_R, M_R)."""
        big = self.max_size
        out = []
        for d in self.scales:
            p = (big - d.shape[-1]) // 2
            out.append(torch.nn.functional.pad(d, (p, p, p, p)))
        return torch.stack(out)

    def to_numpy(self):
        return [d.detach().cpu().numpy() for d in self.scales]


def delta_subdictionary(n_atoms, dtype=torch.float32, device=None):
    """The fixed r=1 sub-dictionary: atom 0 is the 1x1 delta, the rest are zero."""
    d = torch.zeros(n_atoms, 1, 1, dtype=dtype, device=device)
    d[0] = 1.0
    return d


def build_dictionary(atoms, num_scales):
    """Render every atom at sizes 1, 3, ..., 2R-1 and install the delta at r=1."""
    if num_scales < 1:
        raise ValidationError(f"number of scales must be >= 1, got {num_scales}")
    if not atoms:
        raise ValidationError("at least one atom is required")
    ref = atoms[0].out.weight
    scales = [delta_subdictionary(len(atoms), ref.dtype, ref.device)]
    for r in range(2, num_scales + 1):
        size = kernel_size(r)
        scales.append(torch.stack([render_atom(a, size) for a in atoms]))
    return MultiScaleDictionary(scales)


class KernelDictionary(nn.Module):
    """Learnable atom set that renders a :class:`MultiScaleDictionary` on demand."""

    def __init__(self, num_atoms=8, num_scales=7, freq_range=(2.0, 16.0), seed=0,
                 hidden_features=32, hidden_layers=2):
        super().__init__()
        self.num_scales = num_scales
        self.atoms = nn.ModuleList(
            init_atoms(num_atoms, freq_range[0], freq_range[1], seed, hidden_features, hidden_layers))

    @property
    def num_atoms(self):
        return len(self.atoms)

    def forward(self):
        return build_dictionary(list(self.atoms), self.num_scales)


def atoms_to_png_grid(dictionary, path):
    """Write every rendered atom to one 8-bit grayscale PNG (scales as rows).

    Each atom is min-max normalized independently and upscaled by nearest
    neighbour so the smallest atoms stay visible.
    """
    from PIL import Image

    cell = 4 * dictionary.max_size
    rows, cols = dictionary.num_scales, dictionary.num_atoms
    canvas = np.zeros((rows * (cell + 2), cols * (cell + 2)), dtype=np.uint8)
    for r, grids in enumerate(dictionary.to_numpy()):
        for n, g in enumerate(grids):
            lo, hi = float(g.min()), float(g.max())
            norm = np.full_like(g, 0.5) if hi - lo < 1e-12 else (g - lo) / (hi - lo)
            tile = np.kron(norm, np.ones((cell // g.shape[0],) * 2))
            off = (cell - tile.shape[0]) // 2
            y, x = r * (cell + 2) + off, n * (cell + 2) + off
            canvas[y:y + tile.shape[0], x:x + tile.shape[1]] = np.round(tile * 255).astype(np.uint8)
    Image.fromarray(canvas).save(path)
    return path
