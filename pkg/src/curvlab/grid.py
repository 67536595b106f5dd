"""Spherical-shell tensor grids and scalar fields on them.

Radial nodes are geometrically spaced; angular nodes sit half a step off the
poles so no node lies on the coordinate axis.  Dual (node-centered) cells use
geometric-mean radial faces, matching the flux faces of the solver, and carry
exact Euclidean volume weights.
"""

import struct

import numpy as np


class ShellGrid:
    """Structured (r, theta, phi) shell grid, node ordering r-major then theta."""

    def __init__(self, rho_in, rho_out, nr, ntheta, nphi):
        if not 0 < rho_in < rho_out:
            raise ValueError("need 0 < rho_in < rho_out")
        if nr < 4 or ntheta < 4 or nphi < 8:
            raise ValueError("grid too small")
        if nphi % 2:
            raise ValueError("nphi must be even (pole treatment pairs phi with phi+pi)")
        self.rho_in, self.rho_out = float(rho_in), float(rho_out)
        self.nr, self.ntheta, self.nphi = int(nr), int(ntheta), int(nphi)
        self.r = rho_in * (rho_out / rho_in) ** (np.arange(nr) / (nr - 1))
        self.r[0], self.r[-1] = rho_in, rho_out
        self.dtheta = np.pi / ntheta
        self.theta = (np.arange(ntheta) + 0.5) * self.dtheta
        self.dphi = 2 * np.pi / nphi
        self.phi = np.arange(nphi) * self.dphi

        # dual radial bounds at geometric-mean faces
        r_face = np.sqrt(self.r[:-1] * self.r[1:])
        self.r_face = r_face
        self.r_lo = np.concatenate([[self.rho_in], r_face])
        self.r_hi = np.concatenate([r_face, [self.rho_out]])
        self.vol_r = (self.r_hi**3 - self.r_lo**3) / 3.0
        tl = np.arange(ntheta) * self.dtheta
        self.vol_theta = np.cos(tl) - np.cos(tl + self.dtheta)
        self.vol_phi = self.dphi
        self._pts = None

    @property
    def shape(self):
        return (self.nr, self.ntheta, self.nphi)

    @property
    def n(self):
        return self.nr * self.ntheta * self.nphi

    def points(self):
        """Cartesian node coordinates, shape (n, 3), row-major in (r, theta, phi)."""
        if self._pts is None:
            r = self.r[:, None, None]
            th = self.theta[None, :, None]
            ph = self.phi[None, None, :]
            st, ct = np.sin(th), np.cos(th)
            x = r * st * np.cos(ph)
            y = r * st * np.sin(ph)
            z = r * ct * np.ones_like(ph)
            self._pts = np.stack([np.broadcast_to(x, self.shape),
                                  np.broadcast_to(y, self.shape),
                                  np.broadcast_to(z, self.shape)], axis=-1).reshape(-1, 3)
        return self._pts

    def dual_volumes(self):
        """Exact Euclidean dual-cell volumes, shape (nr, ntheta, nphi)."""
        return (self.vol_r[:, None, None] * self.vol_theta[None, :, None]
                * np.full((1, 1, self.nphi), self.vol_phi))

    def unit_frame(self, pts):
        """Orthonormal spherical frame (rhat, thhat, phhat) at Cartesian points."""
        pts = np.atleast_2d(pts)
        r = np.linalg.norm(pts, axis=1)
        rho = np.hypot(pts[:, 0], pts[:, 1])
        rhat = pts / r[:, None]
        ct, st = pts[:, 2] / r, rho / r
        safe = np.maximum(rho, 1e-300)
        cp, sp = pts[:, 0] / safe, pts[:, 1] / safe
        thhat = np.stack([ct * cp, ct * sp, -st], axis=1)
        phhat = np.stack([-sp, cp, np.zeros_like(sp)], axis=1)
        return rhat, thhat, phhat

    def radial_average(self, values):
        """Area-weighted average over each node sphere, shape (nr,)."""
        w = self.vol_theta[None, :, None] * np.ones((1, 1, self.nphi))
        return (values * w).sum(axis=(1, 2)) / w.sum()

    def interp_log_radial(self, values, r_targets):
        """Cubic Lagrange interpolation in ln r per angular column.

        Returns array (len(r_targets), ntheta, nphi); targets must lie within
        the radial range.  Used to transfer smooth fields between grids that
        share the angular family.
        """
        lr = np.log(self.r)
        lt = np.log(np.asarray(r_targets, dtype=float))
        if lt.min() < lr[0] - 1e-12 or lt.max() > lr[-1] + 1e-12:
            raise ValueError("radial interpolation target outside grid range")
        out = np.empty((len(lt), self.ntheta, self.nphi))
        for m, t in enumerate(lt):
            i = int(np.clip(np.searchsorted(lr, t) - 1, 1, self.nr - 3))
            idx = np.arange(i - 1, i + 3)
            xs = lr[idx]
            L = np.ones(4)
            for a in range(4):
                for b in range(4):
                    if a != b:
                        L[a] *= (t - xs[b]) / (xs[a] - xs[b])
            out[m] = np.einsum("a,ajk->jk", L, values[idx])
        return out


class GridFunction:
    """Scalar field on a ShellGrid; values indexed (r, theta, phi)."""

    def __init__(self, grid: ShellGrid, values):
        values = np.asarray(values, dtype=float)
        if values.shape != grid.shape:
            raise ValueError(f"values shape {values.shape} != grid shape {grid.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid function contains non-finite values")
        self.grid = grid
        self.values = values

    @classmethod
    def from_callable(cls, grid, fn):
        vals = np.asarray(fn(grid.points()), dtype=float).reshape(grid.shape)
        return cls(grid, vals)

    def copy(self):
        return GridFunction(self.grid, self.values.copy())

    def save(self, path):
        """Binary dump: header floats [nr, ntheta, nphi, rho_in, rho_out] LE + values."""
        g = self.grid
        with open(path, "wb") as f:
            f.write(struct.pack("<5d", g.nr, g.ntheta, g.nphi, g.rho_in, g.rho_out))
            f.write(self.values.astype("<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            nr, nt, np_, ri, ro = struct.unpack("<5d", f.read(40))
            grid = ShellGrid(ri, ro, int(nr), int(nt), int(np_))
            vals = np.frombuffer(f.read(), dtype="<f8").reshape(grid.shape)
        return cls(grid, vals.copy())


def across_pole_index(grid, k):
    return (k + grid.nphi // 2) % grid.nphi
